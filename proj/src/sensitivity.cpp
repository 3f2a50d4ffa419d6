#include "qlab/sensitivity.hpp"

#include "qlab/error.hpp"
#include "qlab/kernels.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace qlab {

using json = nlohmann::json;

FisherSummary::FisherSummary(std::vector<FisherRecord> records) : records_(std::move(records)) {
    std::set<std::string> names;
    for (const auto & r : records_) {
        require(names.insert(r.name).second, ErrorKind::InvalidArgument, "duplicate tensor name '" + r.name + "'");
        require(std::isfinite(r.mean_fisher) && r.mean_fisher >= 0.0, ErrorKind::InvalidArgument,
                "tensor '" + r.name + "': mean_fisher must be nonnegative");
        require(r.count > 0, ErrorKind::InvalidArgument, "tensor '" + r.name + "': count must be positive");
        require(std::isfinite(r.rms) && r.rms > 0.0, ErrorKind::InvalidArgument,
                "tensor '" + r.name + "': rms must be positive");
    }
}

const FisherRecord * FisherSummary::find(const std::string & name) const {
    for (const auto & r : records_) {
        if (r.name == name) return &r;
    }
    return nullptr;
}

FisherSummary parse_fisher_summary(const std::string & json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception & e) {
        fail(ErrorKind::Parse, std::string("Fisher summary is not valid JSON: ") + e.what());
    }
    require(doc.is_object() && doc.contains("version") && doc["version"] == 1, ErrorKind::Parse,
            "Fisher summary must be an object with \"version\": 1");
    require(doc.contains("tensors") && doc["tensors"].is_array(), ErrorKind::Parse,
            "Fisher summary needs a \"tensors\" array");
    std::vector<FisherRecord> records;
    std::size_t index = 0;
    for (const auto & t : doc["tensors"]) {
        const std::string where = "record " + std::to_string(index++);
        try {
            FisherRecord r;
            r.name = t.at("name").get<std::string>();
            r.mean_fisher = t.at("mean_fisher").get<double>();
            const auto & c = t.at("count");
            require(c.is_number_unsigned() || (c.is_number_integer() && c.get<int64_t>() > 0), ErrorKind::Parse,
                    where + " ('" + r.name + "'): count must be a positive integer");
            r.count = c.get<uint64_t>();
            r.rms = t.at("rms").get<double>();
            require(r.mean_fisher >= 0.0 && r.count > 0 && r.rms > 0.0, ErrorKind::Parse,
                    where + " ('" + r.name + "'): fields out of range");
            records.push_back(std::move(r));
        } catch (const json::exception & e) {
            fail(ErrorKind::Parse, where + ": " + e.what());
        }
    }
    try {
        return FisherSummary(std::move(records));
    } catch (const Error & e) {
        fail(ErrorKind::Parse, e.what());
    }
}

FisherSummary load_fisher_summary(const std::string & path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Input, "cannot open Fisher summary '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_fisher_summary(ss.str());
}

std::string to_json(const FisherSummary & fs) {
    json doc{{"version", 1}, {"tensors", json::array()}};
    for (const auto & r : fs.records()) {
        doc["tensors"].push_back({{"name", r.name}, {"mean_fisher", r.mean_fisher}, {"count", r.count}, {"rms", r.rms}});
    }
    return doc.dump(2);
}

double predict_kl_tensorwise(const FisherSummary & fs, const std::map<std::string, double> & sq_errors) {
    double kl = 0.0;
    for (const auto & r : fs.records()) {
        const auto it = sq_errors.find(r.name);
        require(it != sq_errors.end(), ErrorKind::Input, "no squared error for tensor '" + r.name + "'");
        kl += 0.5 * r.mean_fisher * it->second;
    }
    for (const auto & [name, e] : sq_errors) {
        require(fs.find(name) != nullptr, ErrorKind::Input, "tensor '" + name + "' is not in the Fisher summary");
    }
    return kl;
}

double predict_kl_elementwise(std::span<const float> fisher_diag, std::span<const float> errors) {
    require(fisher_diag.size() == errors.size(), ErrorKind::InvalidArgument, "Fisher and error lengths differ");
    const std::vector<float> zero(errors.size(), 0.0f);
    return 0.5 * kernels::weighted_squared_error(errors, zero, fisher_diag);
}

BitRounding parse_bit_rounding(const std::string & name) {
    if (name == "none") return BitRounding::None;
    if (name == "int") return BitRounding::NearestInt;
    if (name == "quarter") return BitRounding::NearestQuarter;
    fail(ErrorKind::InvalidArgument, "unknown bit rounding '" + name + "'");
}

Allocation allocate_bits(const FisherSummary & fs, double target_bits, BitRounding rounding) {
    require(fs.size() > 0, ErrorKind::InvalidArgument, "cannot allocate bits for an empty summary");
    require(std::isfinite(target_bits), ErrorKind::InvalidArgument, "target bits must be finite");
    const auto & recs = fs.records();
    const std::size_t n = recs.size();
    constexpr double lo = Allocation::min_bits, hi = Allocation::max_bits;

    Allocation a;
    a.target = target_bits;
    a.rounding = rounding;
    // offset c_t = log2 rms + 1/2 log2 fbar; NaN marks zero-Fisher tensors pinned at the floor
    std::vector<double> c(n), w(n);
    double total_n = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        w[t] = static_cast<double>(recs[t].count);
        total_n += w[t];
        c[t] = recs[t].mean_fisher > 0.0 ? std::log2(recs[t].rms) + 0.5 * std::log2(recs[t].mean_fisher)
                                         : std::numeric_limits<double>::quiet_NaN();
    }
    const auto bits_at = [&](double b0, std::size_t t) { return std::isnan(c[t]) ? lo : std::clamp(b0 + c[t], lo, hi); };
    const auto mean_at = [&](double b0) {
        double s = 0.0;
        for (std::size_t t = 0; t < n; ++t) s += w[t] * bits_at(b0, t);
        return s / total_n;
    };

    // Fixed point: solve b0 in closed form over the free set, re-clamp, repeat.
    std::vector<int> state(n, 0); // -1 floor, +1 ceiling, 0 free
    double b0 = 0.0;
    bool settled = false;
    for (a.iterations = 1; a.iterations <= 20; ++a.iterations) {
        double fixed = 0.0, free_n = 0.0, free_c = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            if (std::isnan(c[t]) || state[t] != 0) {
                fixed += w[t] * (std::isnan(c[t]) || state[t] < 0 ? lo : hi);
            } else {
                free_n += w[t];
                free_c += w[t] * c[t];
            }
        }
        if (free_n == 0.0) break;
        b0 = (target_bits * total_n - fixed - free_c) / free_n;
        bool changed = false;
        for (std::size_t t = 0; t < n; ++t) {
            if (std::isnan(c[t])) continue;
            const int s = b0 + c[t] < lo ? -1 : (b0 + c[t] > hi ? 1 : 0);
            // a clamped tensor is released when the new b0 puts it back inside the range
            if (s != state[t]) {
                state[t] = s;
                changed = true;
            }
        }
        if (!changed) {
            settled = true;
            break;
        }
    }
    if (!settled) {
        // monotone in b0: bisect for the clamped solution
        double l = -1e3, h = 1e3;
        for (int i = 0; i < 200; ++i) {
            const double m = 0.5 * (l + h);
            (mean_at(m) < target_bits ? l : h) = m;
        }
        b0 = 0.5 * (l + h);
    }
    a.b0 = b0;
    a.raw_bits.resize(n);
    for (std::size_t t = 0; t < n; ++t) a.raw_bits[t] = bits_at(b0, t);
    a.violation = std::fabs(mean_at(b0) - target_bits) > 1e-6;

    a.bits = a.raw_bits;
    for (double & b : a.bits) {
        if (rounding == BitRounding::NearestInt) b = std::nearbyint(b);
        if (rounding == BitRounding::NearestQuarter) b = std::nearbyint(4.0 * b) / 4.0;
    }
    double mean = 0.0;
    for (std::size_t t = 0; t < n; ++t) mean += w[t] * a.bits[t];
    a.residual = mean / total_n - target_bits;
    return a;
}

double predicted_kl_for_bits(const FisherSummary & fs, std::span<const double> bits) {
    require(bits.size() == fs.size(), ErrorKind::InvalidArgument, "one bit width per tensor required");
    double kl = 0.0;
    for (std::size_t t = 0; t < bits.size(); ++t) {
        const auto & r = fs.records()[t];
        kl += 0.5 * r.mean_fisher * static_cast<double>(r.count) * r.rms * r.rms * std::exp2(-2.0 * bits[t]);
    }
    return kl;
}

double metric_R(std::span<const float> original, std::span<const float> reconstructed) {
    require(original.size() == reconstructed.size(), ErrorKind::InvalidArgument, "shapes differ");
    const double denom = kernels::sum_squares(original);
    require(denom > 0.0, ErrorKind::Domain, "R is undefined for an all-zero tensor");
    return std::sqrt(kernels::squared_error(original, reconstructed) / denom);
}

double scaled_rho(double value, double bits, RhoMode mode) {
    require(bits >= 0.0, ErrorKind::Domain, "bits must be nonnegative");
    return value * std::exp2((mode == RhoMode::KL ? 2.0 : 1.0) * bits);
}

double topk_kl(std::span<const double> p, std::span<const double> q, std::size_t k) {
    require(p.size() == q.size(), ErrorKind::Input, "distributions differ in length");
    require(k >= 1 && k <= p.size(), ErrorKind::Input, "k must lie in [1, vocabulary size]");
    for (auto d : {p, q}) {
        double s = 0.0;
        for (double x : d) {
            require(std::isfinite(x) && x >= 0.0, ErrorKind::Input, "probabilities must be nonnegative");
            s += x;
        }
        require(std::fabs(s - 1.0) <= 1e-9, ErrorKind::Input, "probabilities must sum to 1");
    }
    std::vector<std::size_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
    double kl = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        const double pj = p[idx[j]], qj = q[idx[j]];
        if (pj == 0.0) continue;
        if (qj == 0.0) return std::numeric_limits<double>::infinity();
        kl += pj * std::log(pj / qj);
    }
    double p_tail = 0.0, q_tail = 0.0;
    for (std::size_t j = k; j < idx.size(); ++j) {
        p_tail += p[idx[j]];
        q_tail += q[idx[j]];
    }
    if (p_tail > 0.0) {
        if (q_tail == 0.0) return std::numeric_limits<double>::infinity();
        kl += p_tail * std::log(p_tail / q_tail);
    }
    return std::max(kl, 0.0);
}

MetricsReport make_report(double R, double bits, std::optional<double> predicted_kl) {
    MetricsReport m{R, bits, 0.0, predicted_kl};
    m.rho = predicted_kl ? scaled_rho(*predicted_kl, bits, RhoMode::KL) : scaled_rho(R, bits, RhoMode::R);
    return m;
}

} // namespace qlab
