#pragma once

#include "qlab/distributions.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qlab {

using Code = uint16_t;
inline constexpr std::size_t max_codepoints = 65536;

// Symmetric: mirror-image points, no zero. Asymmetric: contains an exact zero.
// Signmax: contains {0, 1} with 1 the largest point. Unconstrained: any
// strictly increasing set (data-trained codebooks).
enum class Variant { Symmetric, Asymmetric, Signmax, Unconstrained };

std::string to_string(Variant v);
Variant parse_variant(const std::string & name);

enum class CodebookKind { PowerAlpha, Absmax, Int, Float, LloydMax, Custom };

std::string to_string(CodebookKind k);

// How a codebook was built; enough to rebuild it with different parameters.
struct CodebookSource {
    CodebookKind kind = CodebookKind::Custom;
    Family family = Family::Normal;
    double dof = 0.0;
    double alpha = 1.0 / 3.0;
    std::size_t block_size = 0;
    int bits = 0;
    int exp_bits = 0;
    int mant_bits = 0;
};

struct ElementBits {
    std::size_t k;
    double bits; // log2(k), fractional for non-power-of-two k
};

class Codebook {
public:
    // {-1, +1}
    Codebook();
    Codebook(std::vector<float> points, Variant variant, CodebookSource source = {},
             double design_rms = std::numeric_limits<double>::quiet_NaN());

    std::span<const float> points() const { return points_; }
    std::size_t size() const { return points_.size(); }
    Variant variant() const { return variant_; }
    const CodebookSource & source() const { return source_; }

    // RMS of the normalised data this codebook was designed for (NaN if not
    // meaningful, e.g. absmax-normalised designs).
    double design_rms() const { return design_rms_; }

    ElementBits element_bits() const { return {size(), std::log2(static_cast<double>(size()))}; }
    // Width of one packed code in storage.
    int storage_bits() const;

    // Index of the nearest point; ties go to the smaller point. x must be finite.
    Code nearest(double x) const;
    float value(Code index) const { return points_[index]; }

    Codebook scaled(double factor) const;

    std::string describe() const;

private:
    std::vector<float> points_;
    std::vector<double> thresholds_; // exact midpoints between neighbours
    Variant variant_;
    CodebookSource source_;
    double design_rms_;
};

// Codepoints at mid-quantiles of the pdf^alpha distribution of d (alpha = 1/3
// is the cube-root-density quantiser).
Codebook build_power_alpha_codebook(const Distribution & d, std::size_t k, double alpha, Variant variant);

// Codebook for data normalised by its block absolute maximum: reserves +-1
// (Signmax: {0, +1}) and spreads the rest by the power rule applied to d
// truncated at the expected block maximum.
Codebook build_absmax_codebook(const Distribution & d, std::size_t k, std::size_t block_size,
                               Variant variant, double alpha = 1.0 / 3.0);

Codebook build_int_codebook(int bits, Variant variant);

// Signed ExMy float grid with subnormals and a single zero, normalised to max 1.
Codebook build_float_codebook(int exp_bits, int mant_bits);

enum class LloydInit { PlusPlus, UniformPM1 };

struct LloydMaxOptions {
    LloydInit init = LloydInit::PlusPlus;
    double change_tol = 1e-4;
    int max_iterations = 1000;
    uint64_t seed = 0;
};

struct LloydMaxResult {
    std::vector<double> centroids; // sorted
    std::vector<double> distortion; // weighted squared error after each iteration
    int iterations = 0;
    double design_rms = 0.0; // weighted RMS of the training data
};

// 1-D weighted k-means. The trace accepts k = 1; the codebook form needs k >= 2.
LloydMaxResult lloyd_max_trace(std::span<const float> data, std::size_t k, std::span<const float> weights = {},
                               const LloydMaxOptions & options = {});
Codebook lloyd_max(std::span<const float> data, std::size_t k, std::span<const float> weights = {},
                   const LloydMaxOptions & options = {});

std::vector<Code> encode(const Codebook & cb, std::span<const float> values);
std::vector<float> decode(const Codebook & cb, std::span<const Code> indices);

} // namespace qlab
