import json
import math

import numpy as np
import pytest

import stv


def tiny_model_config(layers=2, seed=1):
    c = stv.ModelConfig()
    c.n_layers, c.d_model, c.n_heads, c.d_ff = layers, 8, 2, 16
    c.vocab_size, c.seq_len, c.n_classes, c.seed = 16, 8, 2, seed
    return c


def tiny_data(seed=3, n=400):
    b = stv.BiasConfig()
    b.n_train, b.n_val, b.n_test = n, n // 4, n // 4
    b.vocab_size, b.seq_len, b.rho, b.seed = 16, 8, 0.8, seed
    return stv.split(stv.generate(b), (0.667, 0.167, 0.166), False, seed)


def test_generate_is_deterministic():
    s1, s2 = tiny_data(), tiny_data()
    assert s1.train.digest() == s2.train.digest()
    assert len(s1.train) + len(s1.val) + len(s1.test) == 600
    assert sum(s1.train.group_table) == len(s1.train)
    assert all(1 <= t < 16 for t in s1.train[0].tokens)


def test_forward_and_trace_shapes():
    p = stv.init_params(tiny_model_config())
    tokens = [1, 2, 3, 4, 5, 6, 7]
    logits = stv.forward(p, tokens)
    assert logits.shape == (2,)
    trace = stv.forward(p, tokens, capture=True)
    assert len(trace["resid_pre"]) == 2
    assert trace["resid_pre"][0].shape == (8, 8)
    np.testing.assert_array_equal(trace["logits"], logits)
    probs = stv.classify(logits)
    assert math.isclose(float(probs.sum()), 1.0, rel_tol=1e-6)


def test_ablation_removes_the_direction():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.normal(size=8).astype(np.float32)
        u = rng.normal(size=8).astype(np.float32)
        u /= np.linalg.norm(u)
        y = stv.ablate_vector(x, u)
        assert abs(float(y @ u)) <= 1e-5 * max(1.0, float(np.linalg.norm(x)))
        np.testing.assert_allclose(stv.ablate_vector(y, u), y, atol=1e-6)
        np.testing.assert_array_equal(stv.ablate_vector(x, -u), y)


def test_errors_map_to_python_exceptions():
    c = tiny_model_config()
    c.n_heads = 3
    with pytest.raises(stv.ConfigError):
        stv.init_params(c)
    assert issubclass(stv.ConfigError, stv.Error)
    p = stv.init_params(tiny_model_config())
    with pytest.raises(stv.Error):
        stv.forward(p, [1, 2, 3])
    with pytest.raises(stv.FormatError):
        stv.deserialize_checkpoint(b"nope")


def test_train_extract_sweep_eval(tmp_path):
    s = tiny_data()
    p0 = stv.init_params(tiny_model_config(layers=3))
    tc = stv.TrainConfig()
    tc.epochs, tc.learning_rate = 2, 3e-3
    trained = stv.train_erm(p0, s.train, s.val, tc)
    assert len(trained.report.epoch_loss) == 2
    assert "wall_seconds" not in json.loads(trained.report.to_json())

    path = tmp_path / "m.stvp"
    stv.save_checkpoint(path, trained.params)
    back = stv.load_checkpoint(path)
    assert back.digest() == trained.params.digest()
    assert stv.serialize_checkpoint(back) == path.read_bytes()

    over = stv.select_group(s.train, 0, 0)
    under = stv.select_group(s.train, 0, 1)
    cands = stv.extract_candidates(back, over, under)
    assert [c.layer for c in cands] == [1, 2, 3]
    assert cands[0].degenerate
    sweep = stv.sweep_single_layer(back, cands, s.val)
    assert sweep.chosen_layer in (2, 3)
    best = max(sweep.profile, key=lambda e: (e.wga, e.aga, -e.layer))
    assert best.layer == sweep.chosen_layer

    base = stv.group_accuracies(back, s.test)
    steered = stv.group_accuracies(back, s.test, stv.InterventionSpec.single_global(sweep.chosen.unit))
    assert base.wga <= base.aga
    assert steered.intervention.startswith("single")
    d = stv.compare(base, steered)
    assert math.isclose(d.wga, steered.wga - base.wga, abs_tol=1e-12)

    field = stv.build_full_field(back, over, under)
    assert field.n_layers == 3 and field.mask[0] == 1
    stv.group_accuracies(back, s.test, stv.InterventionSpec.full_field(field))


def test_render_table():
    row = stv.TableRow("Waterbirds", "ERM", "Yes", 62.46, 89.43)
    text = stv.render_table([row])
    assert "62.46" in text and "89.43" in text


def test_run_config_json():
    c = stv.RunConfig.from_json('{"seed": 3, "train": {"epochs": 1}}')
    assert c.seed == 3 and c.train.epochs == 1
    with pytest.raises(stv.ConfigError):
        stv.RunConfig.from_json('{"data": {"rho": 0.4}}')
