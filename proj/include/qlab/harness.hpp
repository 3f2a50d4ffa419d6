#pragma once

// Simulated-data experiments. Each experiment expands its configuration into
// independent grid points, runs them on the OpenMP pool and gathers rows in
// grid order, so output does not depend on scheduling.

#include "qlab/distributions.hpp"
#include "qlab/scaling.hpp"
#include "qlab/sensitivity.hpp"

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace qlab {

inline constexpr std::size_t default_sample_count = std::size_t{1} << 24;
inline constexpr std::size_t min_sample_count = std::size_t{1} << 16;

struct ExperimentConfig {
    Distribution dist = Distribution::normal(1.0);
    std::size_t samples = default_sample_count;
    uint64_t seed = 0;       // data
    uint64_t model_seed = 1; // Lloyd-Max training sample
    std::size_t model_samples = std::size_t{1} << 16;

    std::vector<double> bits{3.0, 4.0, 5.0, 6.0};
    FitMethod fit = FitMethod::MomentMatch;
    bool compression = true;
    bool huffman = false;

    // error-vs-bits block rows
    std::size_t block_size = 128;
    ScaleFormat scale_format{8, 7, ScaleRounding::RoundAway};

    // alpha sweep; empty quantisers means the data's own family
    std::vector<double> alphas{1.0 / 6.0, 1.0 / 4.0, 1.0 / 3.0, 1.0 / 2.0, 2.0 / 3.0, 1.0};
    std::vector<Distribution> quantisers;
    bool lloyd_reference = true;

    // block-size sweep
    std::vector<std::size_t> block_sizes{16, 32, 64, 128, 256, 512};
    std::vector<ScaleFormat> scale_formats{{8, 0, ScaleRounding::RoundAway}, {8, 7, ScaleRounding::RoundAway}};

    // Multiplier applied to statistical tolerances when running scaled down.
    double tolerance_factor = 1.0;

    void validate() const;
};

// Scaled-down configuration for quick runs: `samples` elements and tolerances
// widened by `factor`.
ExperimentConfig scaled_config(std::size_t samples, double factor = 2.0);

struct SweepRow {
    std::string experiment;
    std::string label;
    std::string distribution;
    std::string scaling;
    std::string quantiser;
    std::size_t block_size = 0;
    std::string scale_format;
    double alpha = std::numeric_limits<double>::quiet_NaN();
    bool compressed = false;
    double target_bits = std::numeric_limits<double>::quiet_NaN();
    double bits = std::numeric_limits<double>::quiet_NaN(); // achieved, all overheads included
    double R = std::numeric_limits<double>::quiet_NaN();
    double shannon_bits = std::numeric_limits<double>::quiet_NaN(); // element payload per element
    double huffman_bits = std::numeric_limits<double>::quiet_NaN();
    double predicted_kl = std::numeric_limits<double>::quiet_NaN();
    uint64_t seed = 0;
    uint64_t model_seed = 0;
    bool failed = false;
    std::string note;
    double wall_ms = 0.0;

    double R_2b() const;
};

struct SweepResult {
    std::vector<SweepRow> rows;

    std::size_t failures() const;
    // First row matching all given fields; empty strings match anything.
    const SweepRow * find(const std::string & label, double target_bits = std::numeric_limits<double>::quiet_NaN(),
                          double alpha = std::numeric_limits<double>::quiet_NaN()) const;
};

inline constexpr const char * sweep_csv_magic = "#qlab-sweep-csv,1";
std::string sweep_csv_header();
// Without timing the wall_ms column is left empty, making the output a pure
// function of (config, seed).
std::string to_csv(const SweepResult & r, bool timing = true);
std::string to_json(const SweepResult & r, bool timing = true);

SweepResult run_error_vs_bits(const ExperimentConfig & cfg);
SweepResult run_alpha_sweep(const ExperimentConfig & cfg);
SweepResult run_block_size_sweep(const ExperimentConfig & cfg);
SweepResult run_compression_comparison(const ExperimentConfig & cfg);

SweepResult run_allocation_experiment(const FisherSummary & fs, std::span<const double> targets, bool oracle = true);

// Random 2..n tensor summary with log-uniform Fisher (over 2^8) and RMS (over 2^4).
FisherSummary synthetic_fisher_summary(std::size_t tensors, uint64_t seed, uint64_t count = 1u << 20);

// Minimum predicted KL over per-tensor widths on the quarter-bit grid in [1, 16]
// whose N-weighted mean does not exceed target. At most 4 tensors.
double quarter_grid_min_kl(const FisherSummary & fs, double target_bits);

// Element count for a fixed-length format: round(2^bits), at least 2.
std::size_t codepoints_for_bits(double bits);
// Symmetric for even counts, Asymmetric (with zero) for odd.
Variant variant_for(std::size_t k);

} // namespace qlab
