#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qlab {

struct FisherRecord {
    std::string name;
    double mean_fisher = 0.0; // f-bar, >= 0
    uint64_t count = 0;       // N_t, > 0
    double rms = 0.0;         // sigma-hat, > 0

    bool operator==(const FisherRecord &) const = default;
};

class FisherSummary {
public:
    FisherSummary() = default;
    explicit FisherSummary(std::vector<FisherRecord> records);

    const std::vector<FisherRecord> & records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    const FisherRecord * find(const std::string & name) const;

private:
    std::vector<FisherRecord> records_;
};

// {"version": 1, "tensors": [{"name", "mean_fisher", "count", "rms"}, ...]}
FisherSummary parse_fisher_summary(const std::string & json_text);
FisherSummary load_fisher_summary(const std::string & path);
std::string to_json(const FisherSummary & fs);

// 1/2 sum_t fbar_t * sq_error_t (nats).
double predict_kl_tensorwise(const FisherSummary & fs, const std::map<std::string, double> & sq_errors);
// 1/2 sum_i F_ii * err_i^2.
double predict_kl_elementwise(std::span<const float> fisher_diag, std::span<const float> errors);

enum class BitRounding { None, NearestInt, NearestQuarter };

BitRounding parse_bit_rounding(const std::string & name);

struct Allocation {
    std::vector<double> bits;      // per tensor, after rounding
    std::vector<double> raw_bits;  // per tensor, clamped but unrounded
    double b0 = 0.0;
    double target = 0.0;
    BitRounding rounding = BitRounding::None;
    double residual = 0.0;   // N-weighted mean of `bits` minus target
    bool violation = false;  // target unreachable inside the clamp range
    int iterations = 0;

    static constexpr double min_bits = 1.0;
    static constexpr double max_bits = 16.0;
};

// b_t = b0 + log2 rms_t + 1/2 log2 fbar_t, clamped to [1, 16], with b0 chosen so
// the N-weighted mean equals target. Zero-Fisher tensors sit at the floor.
Allocation allocate_bits(const FisherSummary & fs, double target_bits, BitRounding rounding = BitRounding::None);

// Predicted KL under the asymptotic error model E_t^2 = N_t rms_t^2 2^(-2 b_t).
double predicted_kl_for_bits(const FisherSummary & fs, std::span<const double> bits);

double metric_R(std::span<const float> original, std::span<const float> reconstructed);

enum class RhoMode { KL, R };
double scaled_rho(double value, double bits, RhoMode mode = RhoMode::KL);

// Top-k KL(p || q) in nats with a collapsed tail bucket; +inf if q misses mass p has.
double topk_kl(std::span<const double> p, std::span<const double> q, std::size_t k);

struct MetricsReport {
    double R = 0.0;
    double bits = 0.0;
    double rho = 0.0; // R * 2^b unless a KL is available, then KL * 2^(2b)
    std::optional<double> predicted_kl;
};

MetricsReport make_report(double R, double bits, std::optional<double> predicted_kl = std::nullopt);

} // namespace qlab
