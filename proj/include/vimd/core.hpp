#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace vimd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Shape or length disagreement between operands.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Argument outside its contract (non-positive step, odd length, ...).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf encountered mid-pipeline; message identifies the stage.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// On-disk format violation (bad magic, truncated payload, ...).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A probe the platform cannot provide; never silently degraded.
struct UnsupportedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
    return m;
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ValidationError(msg);
}

inline void require_dims(bool cond, const std::string& msg) {
    if (!cond) throw DimensionError(msg);
}

}  // namespace vimd
