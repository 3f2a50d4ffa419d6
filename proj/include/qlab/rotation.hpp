#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace qlab {

inline constexpr std::size_t default_rotation_cap = 16384;

// theta -> V theta W on a rows x cols (row-major) matrix.
struct RotationPair {
    Eigen::MatrixXd V; // rows x rows
    Eigen::MatrixXd W; // cols x cols
    uint64_t seed = 0;
    bool rows_skipped = false; // dimension above the cap: identity used
    bool cols_skipped = false;

    std::size_t rows() const { return static_cast<std::size_t>(V.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(W.rows()); }
};

// Haar-distributed orthogonal matrix from the QR of an iid Normal matrix.
Eigen::MatrixXd random_orthogonal(std::size_t n, uint64_t seed);

RotationPair random_rotation_pair(std::size_t rows, std::size_t cols, uint64_t seed,
                                  std::size_t cap = default_rotation_cap);

std::vector<float> rotate(std::span<const float> theta, std::size_t rows, std::size_t cols, const RotationPair & r);
std::vector<float> unrotate(std::span<const float> theta, std::size_t rows, std::size_t cols, const RotationPair & r);

} // namespace qlab
