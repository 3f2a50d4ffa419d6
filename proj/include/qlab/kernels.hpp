#pragma once

// Data-parallel inner loops. Each kernel has an OpenMP version and a serial
// reference in kernels::serial; tests check they agree. Reductions use a
// fixed chunking so results do not depend on the thread count.

#include "qlab/codebook.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace qlab {
enum class NormKind;
}

namespace qlab::kernels {

inline constexpr std::size_t reduction_chunk = std::size_t{1} << 15;

// Caps the OpenMP pool from QLAB_THREADS when set.
void configure_threads_from_env();

std::vector<Code> encode(const Codebook & cb, std::span<const float> values);

// Per-group norms over consecutive groups of `group` elements (last may be short).
std::vector<double> group_norms(NormKind kind, std::span<const float> theta, std::size_t group);

// codes[i] = nearest(theta[i] / (scales[g] * element_scale)); zero scale encodes 0.
void encode_groups(const Codebook & cb, std::span<const float> theta, std::size_t group, std::span<const float> scales,
                   double element_scale, std::span<Code> codes);

void decode_groups(const Codebook & cb, std::span<const Code> codes, std::size_t group, std::span<const float> scales,
                   double element_scale, std::span<float> out);

double sum_squares(std::span<const float> x);
double squared_error(std::span<const float> a, std::span<const float> b);
double weighted_squared_error(std::span<const float> a, std::span<const float> b, std::span<const float> w);

// round(theta / delta), ties to even.
std::vector<int64_t> grid_quantise(std::span<const float> theta, double delta);
// Counts of symbols in [offset, offset + k); symbols must lie in range.
std::vector<uint64_t> histogram(std::span<const int64_t> symbols, int64_t offset, std::size_t k);

namespace serial {

std::vector<Code> encode(const Codebook & cb, std::span<const float> values);
std::vector<double> group_norms(NormKind kind, std::span<const float> theta, std::size_t group);
void encode_groups(const Codebook & cb, std::span<const float> theta, std::size_t group, std::span<const float> scales,
                   double element_scale, std::span<Code> codes);
void decode_groups(const Codebook & cb, std::span<const Code> codes, std::size_t group, std::span<const float> scales,
                   double element_scale, std::span<float> out);
double sum_squares(std::span<const float> x);
double squared_error(std::span<const float> a, std::span<const float> b);
double weighted_squared_error(std::span<const float> a, std::span<const float> b, std::span<const float> w);
std::vector<int64_t> grid_quantise(std::span<const float> theta, double delta);
std::vector<uint64_t> histogram(std::span<const int64_t> symbols, int64_t offset, std::size_t k);

} // namespace serial

} // namespace qlab::kernels
