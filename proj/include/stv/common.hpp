#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace stv {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixF = Matrix<float>;
using VectorF = Eigen::VectorXf;

// Error hierarchy. Each category maps onto one CLI exit code (see tools/stv.cpp).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct ContractError : Error {
    using Error::Error;
};

struct SteeringError : Error {
    using Error::Error;
};

struct TrainingError : Error {
    TrainingError(const std::string& what, std::size_t epoch, std::size_t batch)
        : Error(what), epoch(epoch), batch(batch) {}
    std::size_t epoch;
    std::size_t batch;
};

struct ArtifactMismatch : Error {
    using Error::Error;
};

struct FormatError : Error {
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset(offset) {}
    std::uint64_t offset;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace stv
