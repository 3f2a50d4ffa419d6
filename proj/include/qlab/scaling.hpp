#pragma once

#include "qlab/codebook.hpp"
#include "qlab/outliers.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qlab {

enum class Scaling { TensorRMS, BlockAbsmax, BlockSignmax, ChannelAbsmax, ChannelRMS };
enum class NormKind { RMS, Absmax, Signmax };
enum class ScaleRounding { RoundAway, Nearest };

std::string to_string(Scaling s);
Scaling parse_scaling(const std::string & name);
NormKind norm_kind(Scaling s);

// Floating-point scale format with IEEE-style bias, subnormals and the
// all-ones exponent reserved. E8M7 is bfloat16, E8M0 is exponent-only.
struct ScaleFormat {
    int exp_bits = 8;
    int mant_bits = 7;
    ScaleRounding rounding = ScaleRounding::RoundAway;

    // Nominal stored width, sign included.
    int bits() const { return 1 + exp_bits + mant_bits; }
    double max_value() const;
    double min_value() const; // smallest positive representable
    void validate() const;
    std::string name() const;

    bool operator==(const ScaleFormat &) const = default;
};

ScaleFormat parse_scale_format(const std::string & name); // "e8m7", "E8M0", "bf16"

struct QuantisedScale {
    double value;
    bool clamped; // |n| exceeded the format maximum
};

QuantisedScale quantise_scale(double n, const ScaleFormat & format);

struct FormatSpec {
    Scaling scaling = Scaling::TensorRMS;
    std::size_t block_size = 1; // used by BlockAbsmax / BlockSignmax
    Codebook codebook;
    ScaleFormat scale_format{};
    // Extra multiplier between the stored scale and the codebook:
    // theta ~ scale * element_scale * codepoint.
    double element_scale = 1.0;

    void validate() const;
    std::string describe() const;
};

// Number of consecutive elements sharing one scale.
std::size_t group_size(const FormatSpec & spec, std::span<const std::size_t> shape);

struct QuantisedTensor {
    std::vector<std::size_t> shape;
    std::vector<Code> codes;
    std::vector<float> scales;
    FormatSpec spec;
    OutlierSet outliers;
    std::size_t clamped_scales = 0;

    std::size_t element_count() const { return codes.size(); }
    // Validates lengths against shape and spec.
    void check() const;
};

std::size_t element_count(std::span<const std::size_t> shape);

double compute_norm(NormKind kind, std::span<const float> block);

QuantisedTensor quantise_tensor(std::span<const float> theta, std::span<const std::size_t> shape, const FormatSpec & spec);
// As above after moving the largest-magnitude fraction of values into sparse outliers.
QuantisedTensor quantise_tensor(std::span<const float> theta, std::span<const std::size_t> shape, const FormatSpec & spec,
                                double outlier_fraction);
std::vector<float> dequantise_tensor(const QuantisedTensor & q);

// Ideal accounting: log2 K per element plus amortised scale, sign and outlier bits.
double bits_per_param(const QuantisedTensor & q);
double bits_per_param(const FormatSpec & spec, std::span<const std::size_t> shape, std::size_t outlier_count = 0);

enum class FitMethod { MomentMatch, ScaleSearch, NuSearch, FisherWeightedSearch };

FitMethod parse_fit_method(const std::string & name);

struct FitResult {
    FormatSpec spec;
    double multiplier = 1.0; // chosen multiple of the moment-matched element scale
    std::optional<double> dof; // chosen Student-t dof (NuSearch)
    double squared_error = 0.0; // (weighted) squared error of the result
    bool degenerate = false; // all-zero data; spec returned unchanged
};

// Scale search grid 2^-2 .. 2^2 in quarter-octave steps.
std::vector<double> scale_search_grid();
// Student-t dof grid logspace(log2 3, log2 100, 12, base 2).
std::vector<double> dof_search_grid();

FitResult fit_quantiser_params(std::span<const float> data, std::span<const std::size_t> shape,
                               const FormatSpec & spec_template, FitMethod method,
                               std::span<const float> fisher_diag = {});

} // namespace qlab
