#pragma once

#include "qlab/bitstream.hpp"
#include "qlab/codebook.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace qlab {

enum class Smoothing { AddOne, None };

// pmf over the contiguous symbol range [offset, offset + size).
struct ProbabilityModel {
    std::vector<double> probs;
    int64_t offset = 0;

    std::size_t size() const { return probs.size(); }
    bool covers(int64_t symbol) const {
        return symbol >= offset && symbol - offset < static_cast<int64_t>(probs.size()) && probs[symbol - offset] > 0.0;
    }
    double probability(int64_t symbol) const;
    int64_t min_symbol() const { return offset; }
    int64_t max_symbol() const { return offset + static_cast<int64_t>(probs.size()) - 1; }

    // Same model with each probability rounded through float32 and renormalised,
    // i.e. what a reader of the serialised table sees.
    ProbabilityModel rounded_to_float() const;
    void validate() const;
};

// Codebook indices in [0, k).
ProbabilityModel estimate_probability_model(std::span<const Code> codes, std::size_t k, Smoothing smoothing);
// Signed grid indices; the support is the observed range [min, max].
ProbabilityModel estimate_grid_model(std::span<const int64_t> indices, Smoothing smoothing);

// Total -log2 p over the symbols.
double information_bits(const ProbabilityModel & model, std::span<const int64_t> symbols);
double information_bits(const ProbabilityModel & model, std::span<const Code> codes);
double entropy_bits(const ProbabilityModel & model);

// Table storage charged when the model travels with the data: 16 bits per entry.
inline double model_storage_bits(const ProbabilityModel & model) { return 16.0 * static_cast<double>(model.size()); }

// Canonical Huffman code. Zero-probability symbols get no codeword; a model
// with a single coded symbol uses zero-length codewords.
struct HuffmanCode {
    int64_t offset = 0;
    std::vector<uint8_t> lengths;    // 0 for uncoded symbols
    std::vector<uint64_t> codewords; // right-aligned, `lengths[i]` bits
    std::vector<uint8_t> coded;

    static constexpr int max_length = 64;

    std::size_t size() const { return lengths.size(); }
    double kraft_sum() const;
    double expected_length(const ProbabilityModel & model) const;
    uint64_t encoded_bits(std::span<const int64_t> symbols) const;
};

HuffmanCode build_huffman(const ProbabilityModel & model);

struct EncodedBits {
    std::vector<uint8_t> bytes;
    uint64_t bit_count = 0;
};

EncodedBits huffman_encode(const HuffmanCode & code, std::span<const int64_t> symbols);
std::vector<int64_t> huffman_decode(const HuffmanCode & code, const EncodedBits & bits, std::size_t count);

std::vector<int64_t> to_symbols(std::span<const Code> codes);

struct UniformGrid {
    double resolution = 1.0; // codepoints are resolution * k
};

// k = round(theta / delta), ties to even.
std::vector<int64_t> grid_quantise(std::span<const float> theta, const UniformGrid & grid);
std::vector<float> grid_dequantise(std::span<const int64_t> indices, const UniformGrid & grid);

// Clamps symbols outside the model support into it. Returns how many moved.
std::size_t clamp_to_support(std::span<int64_t> symbols, const ProbabilityModel & model);

// Largest index range a grid model may span during the resolution search.
inline constexpr int64_t max_grid_symbols = int64_t{1} << 24;

struct GridSearchResult {
    UniformGrid grid;
    double achieved_bits = 0.0; // Shannon bits per element
    bool reachable = true;
    std::size_t clamped = 0;     // symbols clamped into a held-out model's support
    int iterations = 0;
};

// Bisection on log(delta) for a Shannon bits/element target. The probability
// model is fitted on `model_sample` when given (codes of theta outside its
// range are clamped), otherwise on theta itself.
GridSearchResult search_grid_resolution(std::span<const float> theta, double target_bits, Smoothing smoothing,
                                        std::span<const float> model_sample = {}, double tolerance = 0.02);

// Shannon bits/element of theta on a given grid, with the same model rules.
double grid_bits_per_element(std::span<const float> theta, const UniformGrid & grid, Smoothing smoothing,
                             std::span<const float> model_sample = {}, std::size_t * clamped = nullptr);

} // namespace qlab
