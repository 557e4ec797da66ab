"""Difference-in-means bias vectors and directional ablation on a small transformer encoder."""

from ._core import *  # noqa: F401,F403
from ._core import EvalReport, Error, RunConfig, TrainReport

__all__ = [name for name in dir() if not name.startswith("_")]
