#include "qlab/harness.hpp"

#include "qlab/codebook.hpp"
#include "qlab/entropy.hpp"
#include "qlab/error.hpp"
#include "qlab/kernels.hpp"
#include "qlab/rng.hpp"

#include <json.hpp>
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

namespace qlab {

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

Distribution unit_of(const Distribution & d) { return Distribution::unit_rms(d.family(), d.dof()); }

// Rows that fail keep their identifying fields, so jobs fill a template first.
struct RowJob {
    SweepRow ident;
    std::function<void(SweepRow &)> body;
};

SweepResult run_row_jobs(const std::vector<RowJob> & jobs) {
    SweepResult out;
    out.rows.resize(jobs.size());
    const auto n = static_cast<std::ptrdiff_t>(jobs.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        SweepRow row = jobs[i].ident;
        try {
            jobs[i].body(row);
        } catch (const std::exception & e) {
            row = jobs[i].ident;
            row.failed = true;
            row.note = e.what();
        }
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        out.rows[i] = std::move(row);
    }
    return out;
}

struct CodeStats {
    double shannon = 0.0; // bits per element
    double huffman = nan;
};

CodeStats code_stats(std::span<const int64_t> symbols, bool huffman) {
    const auto model = estimate_grid_model(symbols, Smoothing::None);
    CodeStats s;
    const double n = static_cast<double>(symbols.size());
    s.shannon = information_bits(model, symbols) / n;
    if (huffman) s.huffman = static_cast<double>(build_huffman(model).encoded_bits(symbols)) / n;
    return s;
}

// Fixed-length quantisation of a flat tensor; fills bits, R and entropy columns.
void fixed_length(SweepRow & row, std::span<const float> theta, const FormatSpec & tmpl, FitMethod fit, bool huffman) {
    const std::vector<std::size_t> shape{theta.size()};
    const auto fitted = fit_quantiser_params(theta, shape, tmpl, fit);
    const auto q = quantise_tensor(theta, shape, fitted.spec);
    const auto recon = dequantise_tensor(q);
    row.bits = bits_per_param(q);
    row.R = metric_R(theta, recon);
    const auto symbols = to_symbols(q.codes);
    const auto s = code_stats(symbols, huffman);
    row.shannon_bits = s.shannon;
    row.huffman_bits = s.huffman;
    row.quantiser = fitted.spec.codebook.describe();
    if (fitted.degenerate) row.note = "degenerate data";
}

// Uniform grid on theta / scale_g with Shannon accounting. Block scales (when
// group > 0) are quantised to `sf` and charged at sf.bits() per group; the
// tensor-level grid resolution is charged 32 bits.
void grid_row(SweepRow & row, std::span<const float> theta, double target, std::size_t group, const ScaleFormat & sf,
              bool huffman) {
    const std::size_t n = theta.size();
    std::vector<float> u(theta.begin(), theta.end());
    std::vector<float> scales;
    double overhead = 32.0 / static_cast<double>(n);
    if (group > 0) {
        const auto norms = kernels::group_norms(NormKind::Absmax, theta, group);
        scales.resize(norms.size());
        for (std::size_t g = 0; g < norms.size(); ++g) scales[g] = static_cast<float>(quantise_scale(norms[g], sf).value);
        for (std::size_t i = 0; i < n; ++i) {
            const float s = scales[i / group];
            u[i] = s == 0.0f ? 0.0f : static_cast<float>(static_cast<double>(theta[i]) / s);
        }
        overhead += static_cast<double>(scales.size()) * sf.bits() / static_cast<double>(n);
    }
    const auto search = search_grid_resolution(u, target - overhead, Smoothing::None);
    const auto symbols = grid_quantise(u, search.grid);
    auto recon = grid_dequantise(symbols, search.grid);
    if (group > 0) {
        for (std::size_t i = 0; i < n; ++i) recon[i] = static_cast<float>(static_cast<double>(recon[i]) * scales[i / group]);
    }
    const auto s = code_stats(symbols, huffman);
    row.shannon_bits = s.shannon;
    row.huffman_bits = s.huffman;
    row.bits = s.shannon + overhead;
    row.R = metric_R(theta, recon);
    std::ostringstream os;
    os << "grid(delta=" << search.grid.resolution << ")";
    row.quantiser = os.str();
    if (!search.reachable) row.note = "target bits unreachable";
}

FormatSpec tensor_rms_spec(const Codebook & cb) {
    FormatSpec spec;
    spec.scaling = Scaling::TensorRMS;
    spec.codebook = cb;
    return spec;
}

FormatSpec block_absmax_spec(const Codebook & cb, std::size_t block, const ScaleFormat & sf) {
    FormatSpec spec;
    spec.scaling = Scaling::BlockAbsmax;
    spec.block_size = block;
    spec.codebook = cb;
    spec.scale_format = sf;
    return spec;
}

SweepRow base_row(const std::string & experiment, const ExperimentConfig & cfg) {
    SweepRow r;
    r.experiment = experiment;
    r.distribution = describe(cfg.dist);
    r.seed = cfg.seed;
    r.model_seed = cfg.model_seed;
    return r;
}

std::string fmt_double(double x) {
    if (!std::isfinite(x)) return std::isnan(x) ? "" : (x > 0 ? "inf" : "-inf");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string csv_field(const std::string & s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

// Shannon bits/element of tensor-RMS codes for a power-alpha codebook of k points.
double power_alpha_entropy(std::span<const float> theta, const Distribution & q, std::size_t k, double alpha,
                           FitMethod fit) {
    const auto cb = build_power_alpha_codebook(q, k, alpha, variant_for(k));
    const std::vector<std::size_t> shape{theta.size()};
    const auto fitted = fit_quantiser_params(theta, shape, tensor_rms_spec(cb), fit);
    const auto qt = quantise_tensor(theta, shape, fitted.spec);
    const auto symbols = to_symbols(qt.codes);
    return information_bits(estimate_grid_model(symbols, Smoothing::None), symbols) / static_cast<double>(theta.size());
}

// Smallest codebook size whose code entropy reaches the target, or its predecessor
// when that lands closer.
std::size_t codepoints_for_entropy(std::span<const float> theta, const Distribution & q, double alpha, double target,
                                   FitMethod fit) {
    std::size_t lo = 2, hi = 4;
    while (hi < max_codepoints && power_alpha_entropy(theta, q, hi, alpha, fit) < target) {
        lo = hi;
        hi = std::min(hi * 2, max_codepoints);
    }
    while (hi - lo > 1) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (power_alpha_entropy(theta, q, mid, alpha, fit) < target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    const double h_lo = power_alpha_entropy(theta, q, lo, alpha, fit);
    const double h_hi = power_alpha_entropy(theta, q, hi, alpha, fit);
    return std::fabs(h_lo - target) < std::fabs(h_hi - target) ? lo : hi;
}

} // namespace

void ExperimentConfig::validate() const {
    require(samples >= min_sample_count, ErrorKind::InvalidArgument, "sample count must be at least 2^16");
    require(model_samples >= 2, ErrorKind::InvalidArgument, "model sample count must be at least 2");
    require(!bits.empty(), ErrorKind::InvalidArgument, "no target bit widths given");
    for (double b : bits) {
        require(std::isfinite(b) && b > 0.0 && b <= 16.0, ErrorKind::InvalidArgument, "target bits must lie in (0, 16]");
    }
    for (double a : alphas) {
        require(std::isfinite(a) && a > 0.0 && a <= 1.0, ErrorKind::InvalidArgument, "alpha grid must lie in (0, 1]");
    }
    require(block_size >= 1, ErrorKind::InvalidArgument, "block size must be >= 1");
    for (std::size_t b : block_sizes) require(b >= 1, ErrorKind::InvalidArgument, "block sizes must be >= 1");
    scale_format.validate();
    for (const auto & f : scale_formats) f.validate();
    require(tolerance_factor >= 1.0, ErrorKind::InvalidArgument, "tolerance factor must be >= 1");
}

ExperimentConfig scaled_config(std::size_t samples, double factor) {
    ExperimentConfig cfg;
    cfg.samples = samples;
    cfg.tolerance_factor = factor;
    return cfg;
}

double SweepRow::R_2b() const { return R * std::exp2(bits); }

std::size_t SweepResult::failures() const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const SweepRow & r) { return r.failed; }));
}

const SweepRow * SweepResult::find(const std::string & label, double target_bits, double alpha) const {
    for (const auto & r : rows) {
        if (!label.empty() && r.label != label) continue;
        if (!std::isnan(target_bits) && !(std::fabs(r.target_bits - target_bits) < 1e-12)) continue;
        if (!std::isnan(alpha) && !(std::fabs(r.alpha - alpha) < 1e-12)) continue;
        return &r;
    }
    return nullptr;
}

std::string sweep_csv_header() {
    return "experiment,label,distribution,scaling,quantiser,block_size,scale_format,alpha,compressed,target_bits,bits,R,"
           "R_2b,shannon_bits,huffman_bits,predicted_kl,seed,model_seed,failed,note,wall_ms";
}

std::string to_csv(const SweepResult & r, bool timing) {
    std::ostringstream os;
    os << sweep_csv_magic << "\n" << sweep_csv_header() << "\n";
    for (const auto & row : r.rows) {
        os << csv_field(row.experiment) << ',' << csv_field(row.label) << ',' << csv_field(row.distribution) << ','
           << csv_field(row.scaling) << ',' << csv_field(row.quantiser) << ','
           << (row.block_size ? std::to_string(row.block_size) : "") << ',' << csv_field(row.scale_format) << ','
           << fmt_double(row.alpha) << ',' << (row.compressed ? 1 : 0) << ',' << fmt_double(row.target_bits) << ','
           << fmt_double(row.bits) << ',' << fmt_double(row.R) << ',' << fmt_double(row.R_2b()) << ','
           << fmt_double(row.shannon_bits) << ',' << fmt_double(row.huffman_bits) << ','
           << fmt_double(row.predicted_kl) << ',' << row.seed << ',' << row.model_seed << ','
           << (row.failed ? 1 : 0) << ',' << csv_field(row.note) << ',' << (timing ? fmt_double(row.wall_ms) : "")
           << "\n";
    }
    return os.str();
}

std::string to_json(const SweepResult & r, bool timing) {
    auto num = [](double x) -> nlohmann::json {
        if (std::isfinite(x)) return x;
        return nullptr;
    };
    nlohmann::json rows = nlohmann::json::array();
    for (const auto & row : r.rows) {
        nlohmann::json j{{"experiment", row.experiment},
                         {"label", row.label},
                         {"distribution", row.distribution},
                         {"scaling", row.scaling},
                         {"quantiser", row.quantiser},
                         {"block_size", row.block_size},
                         {"scale_format", row.scale_format},
                         {"alpha", num(row.alpha)},
                         {"compressed", row.compressed},
                         {"target_bits", num(row.target_bits)},
                         {"bits", num(row.bits)},
                         {"R", num(row.R)},
                         {"R_2b", num(row.R_2b())},
                         {"shannon_bits", num(row.shannon_bits)},
                         {"huffman_bits", num(row.huffman_bits)},
                         {"predicted_kl", num(row.predicted_kl)},
                         {"seed", row.seed},
                         {"model_seed", row.model_seed},
                         {"failed", row.failed},
                         {"note", row.note}};
        if (timing) j["wall_ms"] = row.wall_ms;
        rows.push_back(std::move(j));
    }
    return nlohmann::json{{"format", "qlab-sweep"}, {"version", 1}, {"rows", rows}}.dump(1) + "\n";
}

std::size_t codepoints_for_bits(double bits) {
    require(std::isfinite(bits) && bits >= 1.0 && bits <= 16.0, ErrorKind::InvalidArgument,
            "element bits must lie in [1, 16]");
    return std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(std::exp2(bits))));
}

Variant variant_for(std::size_t k) { return k % 2 == 0 ? Variant::Symmetric : Variant::Asymmetric; }

SweepResult run_error_vs_bits(const ExperimentConfig & cfg) {
    cfg.validate();
    const auto theta = sample(cfg.dist, cfg.samples, cfg.seed);
    const Distribution unit = unit_of(cfg.dist);
    const double block_overhead = static_cast<double>(cfg.scale_format.bits()) / static_cast<double>(cfg.block_size);

    std::vector<RowJob> jobs;
    for (double b : cfg.bits) {
        SweepRow id = base_row("error-vs-bits", cfg);
        id.target_bits = b;

        SweepRow t = id;
        t.label = "tensor-rms";
        t.scaling = to_string(Scaling::TensorRMS);
        t.alpha = 1.0 / 3.0;
        jobs.push_back({t, [&, b](SweepRow & row) {
                            const std::size_t k = codepoints_for_bits(b);
                            const auto cb = build_power_alpha_codebook(unit, k, 1.0 / 3.0, variant_for(k));
                            fixed_length(row, theta, tensor_rms_spec(cb), cfg.fit, cfg.huffman);
                        }});

        SweepRow a = id;
        a.label = "block-absmax";
        a.scaling = to_string(Scaling::BlockAbsmax);
        a.block_size = cfg.block_size;
        a.scale_format = cfg.scale_format.name();
        a.alpha = 1.0 / 3.0;
        jobs.push_back({a, [&, b](SweepRow & row) {
                            const std::size_t k = codepoints_for_bits(b - block_overhead);
                            const auto cb =
                                build_absmax_codebook(unit, k, cfg.block_size, variant_for(k));
                            fixed_length(row, theta, block_absmax_spec(cb, cfg.block_size, cfg.scale_format), cfg.fit,
                                         cfg.huffman);
                        }});

        if (!cfg.compression) continue;
        SweepRow tg = t;
        tg.label = "tensor-rms+grid";
        tg.alpha = 0.0;
        tg.compressed = true;
        jobs.push_back({tg, [&, b](SweepRow & row) { grid_row(row, theta, b, 0, cfg.scale_format, cfg.huffman); }});

        SweepRow ag = a;
        ag.label = "block-absmax+grid";
        ag.alpha = 0.0;
        ag.compressed = true;
        jobs.push_back({ag, [&, b](SweepRow & row) {
                            grid_row(row, theta, b, cfg.block_size, cfg.scale_format, cfg.huffman);
                        }});
    }
    return run_row_jobs(jobs);
}

SweepResult run_alpha_sweep(const ExperimentConfig & cfg) {
    cfg.validate();
    require(!cfg.alphas.empty(), ErrorKind::InvalidArgument, "alpha grid is empty");
    const auto theta = sample(cfg.dist, cfg.samples, cfg.seed);
    std::vector<Distribution> quantisers = cfg.quantisers;
    if (quantisers.empty()) quantisers.push_back(cfg.dist);
    for (auto & q : quantisers) q = unit_of(q);
    const std::vector<std::size_t> shape{theta.size()};

    std::vector<RowJob> jobs;
    for (double b : cfg.bits) {
        SweepRow id = base_row("alpha-sweep", cfg);
        id.scaling = to_string(Scaling::TensorRMS);
        id.target_bits = b;
        for (const auto & q : quantisers) {
            for (double alpha : cfg.alphas) {
                SweepRow r = id;
                r.label = "power-alpha/" + to_string(q.family());
                r.alpha = alpha;
                r.quantiser = describe(q);
                jobs.push_back({r, [&, b, q, alpha](SweepRow & row) {
                                    const std::size_t k = codepoints_for_bits(b);
                                    const auto cb = build_power_alpha_codebook(q, k, alpha, variant_for(k));
                                    fixed_length(row, theta, tensor_rms_spec(cb), cfg.fit, cfg.huffman);
                                }});
            }
        }
        if (cfg.lloyd_reference) {
            SweepRow r = id;
            r.label = "lloyd-max";
            jobs.push_back({r, [&, b](SweepRow & row) {
                                const auto train = sample(cfg.dist, cfg.model_samples, cfg.model_seed);
                                const double s = std::sqrt(kernels::sum_squares(train) / static_cast<double>(train.size()));
                                std::vector<float> unit_train(train.size());
                                for (std::size_t i = 0; i < train.size(); ++i) unit_train[i] = static_cast<float>(train[i] / s);
                                LloydMaxOptions opt;
                                opt.seed = cfg.model_seed;
                                const auto cb = lloyd_max(unit_train, codepoints_for_bits(b), {}, opt);
                                fixed_length(row, theta, tensor_rms_spec(cb), FitMethod::MomentMatch, cfg.huffman);
                            }});
        }
        if (!cfg.compression) continue;
        SweepRow g = id;
        g.label = "grid";
        g.alpha = 0.0;
        g.compressed = true;
        jobs.push_back({g, [&, b](SweepRow & row) { grid_row(row, theta, b, 0, cfg.scale_format, cfg.huffman); }});
        for (const auto & q : quantisers) {
            for (double alpha : cfg.alphas) {
                SweepRow r = id;
                r.label = "power-alpha+entropy/" + to_string(q.family());
                r.alpha = alpha;
                r.compressed = true;
                jobs.push_back({r, [&, b, q, alpha](SweepRow & row) {
                                    const std::size_t k = codepoints_for_entropy(theta, q, alpha, b, cfg.fit);
                                    const auto cb = build_power_alpha_codebook(q, k, alpha, variant_for(k));
                                    fixed_length(row, theta, tensor_rms_spec(cb), cfg.fit, cfg.huffman);
                                    // entropy-coded: the payload costs the code entropy, not log2 K
                                    row.bits += row.shannon_bits - std::log2(static_cast<double>(k));
                                }});
            }
        }
    }
    return run_row_jobs(jobs);
}

SweepResult run_block_size_sweep(const ExperimentConfig & cfg) {
    cfg.validate();
    const auto theta = sample(cfg.dist, cfg.samples, cfg.seed);
    const Distribution unit = unit_of(cfg.dist);
    std::vector<RowJob> jobs;
    for (double b : cfg.bits) {
        for (const auto & sf : cfg.scale_formats) {
            for (std::size_t block : cfg.block_sizes) {
                SweepRow r = base_row("block-size", cfg);
                r.label = "block-absmax";
                r.scaling = to_string(Scaling::BlockAbsmax);
                r.block_size = block;
                r.scale_format = sf.name();
                r.alpha = 1.0 / 3.0;
                r.target_bits = b;
                jobs.push_back({r, [&, b, sf, block](SweepRow & row) {
                                    const double element = b - static_cast<double>(sf.bits()) / static_cast<double>(block);
                                    const std::size_t k = codepoints_for_bits(element);
                                    require(k >= 3, ErrorKind::InvalidArgument, "block too small for the bit budget");
                                    const auto cb = build_absmax_codebook(unit, k, block, variant_for(k));
                                    fixed_length(row, theta, block_absmax_spec(cb, block, sf), cfg.fit, cfg.huffman);
                                }});
            }
        }
    }
    return run_row_jobs(jobs);
}

SweepResult run_compression_comparison(const ExperimentConfig & cfg) {
    cfg.validate();
    const auto theta = sample(cfg.dist, cfg.samples, cfg.seed);
    const Distribution unit = unit_of(cfg.dist);
    const std::vector<std::size_t> shape{theta.size()};
    std::vector<RowJob> jobs;
    auto huffman_roundtrip = [](SweepRow & row, std::span<const int64_t> symbols) {
        const auto model = estimate_grid_model(symbols, Smoothing::None);
        const auto code = build_huffman(model);
        const auto enc = huffman_encode(code, symbols);
        const auto dec = huffman_decode(code, enc, symbols.size());
        const double n = static_cast<double>(symbols.size());
        row.shannon_bits = information_bits(model, symbols) / n;
        row.huffman_bits = static_cast<double>(enc.bit_count) / n;
        if (!std::equal(dec.begin(), dec.end(), symbols.begin(), symbols.end())) {
            row.failed = true;
            row.note = "huffman roundtrip mismatch";
        }
    };
    for (double b : cfg.bits) {
        SweepRow id = base_row("compression", cfg);
        id.scaling = to_string(Scaling::TensorRMS);
        id.target_bits = b;
        id.compressed = true;

        SweepRow c = id;
        c.label = "crd+huffman";
        c.alpha = 1.0 / 3.0;
        jobs.push_back({c, [&, b](SweepRow & row) {
                            const std::size_t k = codepoints_for_bits(b);
                            const auto cb = build_power_alpha_codebook(unit, k, 1.0 / 3.0, variant_for(k));
                            const auto fitted = fit_quantiser_params(theta, shape, tensor_rms_spec(cb), cfg.fit);
                            const auto q = quantise_tensor(theta, shape, fitted.spec);
                            row.quantiser = fitted.spec.codebook.describe();
                            row.R = metric_R(theta, dequantise_tensor(q));
                            const auto symbols = to_symbols(q.codes);
                            huffman_roundtrip(row, symbols);
                            row.bits = bits_per_param(q) - std::log2(static_cast<double>(k)) + row.huffman_bits;
                        }});

        SweepRow g = id;
        g.label = "grid+huffman";
        g.alpha = 0.0;
        jobs.push_back({g, [&, b](SweepRow & row) {
                            const auto search = search_grid_resolution(theta, b, Smoothing::None);
                            const auto symbols = grid_quantise(theta, search.grid);
                            row.R = metric_R(theta, grid_dequantise(symbols, search.grid));
                            std::ostringstream os;
                            os << "grid(delta=" << search.grid.resolution << ")";
                            row.quantiser = os.str();
                            huffman_roundtrip(row, symbols);
                            row.bits = row.huffman_bits + 32.0 / static_cast<double>(theta.size());
                            if (!search.reachable) row.note = "target bits unreachable";
                        }});
    }
    return run_row_jobs(jobs);
}

double quarter_grid_min_kl(const FisherSummary & fs, double target_bits) {
    const std::size_t n = fs.size();
    require(n >= 1 && n <= 4, ErrorKind::InvalidArgument, "quarter-grid oracle handles 1 to 4 tensors");
    const auto & recs = fs.records();
    double total = 0.0;
    for (const auto & r : recs) total += static_cast<double>(r.count);
    const double budget = target_bits * total * (1.0 + 1e-12);
    constexpr int steps = 61; // 1, 1.25, ..., 16
    std::vector<double> b(n);
    double best = std::numeric_limits<double>::infinity();
    std::function<void(std::size_t, double)> rec = [&](std::size_t t, double used) {
        const double nt = static_cast<double>(recs[t].count);
        if (t + 1 == n) {
            // predicted KL falls with bits: take the widest affordable width
            const int q = std::min(steps - 1, static_cast<int>(std::floor(((budget - used) / nt - 1.0) * 4.0 + 1e-9)));
            if (q < 0) return;
            b[t] = 1.0 + 0.25 * q;
            best = std::min(best, predicted_kl_for_bits(fs, b));
            return;
        }
        for (int q = 0; q < steps; ++q) {
            b[t] = 1.0 + 0.25 * q;
            const double u = used + b[t] * nt;
            if (u > budget) break;
            rec(t + 1, u);
        }
    };
    rec(0, 0.0);
    return best;
}

FisherSummary synthetic_fisher_summary(std::size_t tensors, uint64_t seed, uint64_t count) {
    require(tensors >= 2, ErrorKind::InvalidArgument, "need at least two tensors");
    const CounterRng rng(seed);
    std::vector<FisherRecord> recs;
    for (std::size_t t = 0; t < tensors; ++t) {
        FisherRecord r;
        r.name = "t" + std::to_string(t);
        r.mean_fisher = std::exp2(8.0 * rng.uniform(2 * t) - 4.0);
        r.rms = std::exp2(4.0 * rng.uniform(2 * t + 1) - 2.0);
        r.count = count;
        recs.push_back(std::move(r));
    }
    return FisherSummary(std::move(recs));
}

SweepResult run_allocation_experiment(const FisherSummary & fs, std::span<const double> targets, bool oracle) {
    require(fs.size() >= 2, ErrorKind::InvalidArgument, "allocation needs at least two tensors");
    require(!targets.empty(), ErrorKind::InvalidArgument, "no target bit widths given");
    std::vector<RowJob> jobs;
    for (double target : targets) {
        SweepRow id;
        id.experiment = "allocation";
        id.target_bits = target;
        id.distribution = std::to_string(fs.size()) + " tensors";

        SweepRow flat = id;
        flat.label = "flat";
        jobs.push_back({flat, [&fs, target](SweepRow & row) {
                            require(target >= Allocation::min_bits && target <= Allocation::max_bits,
                                    ErrorKind::Infeasible, "target outside [1, 16] bits");
                            const std::vector<double> b(fs.size(), target);
                            row.bits = target;
                            row.predicted_kl = predicted_kl_for_bits(fs, b);
                        }});

        SweepRow var = id;
        var.label = "variable";
        jobs.push_back({var, [&fs, target](SweepRow & row) {
                            const auto a = allocate_bits(fs, target);
                            double s = 0.0, w = 0.0;
                            for (std::size_t t = 0; t < fs.size(); ++t) {
                                s += a.bits[t] * static_cast<double>(fs.records()[t].count);
                                w += static_cast<double>(fs.records()[t].count);
                            }
                            row.bits = s / w;
                            row.predicted_kl = predicted_kl_for_bits(fs, a.bits);
                            std::ostringstream os;
                            for (std::size_t t = 0; t < a.bits.size(); ++t) os << (t ? " " : "") << a.bits[t];
                            row.quantiser = os.str();
                            if (a.violation) row.note = "target unreachable inside [1, 16] bits";
                        }});

        if (oracle && fs.size() <= 4) {
            SweepRow o = id;
            o.label = "oracle-quarter";
            jobs.push_back({o, [&fs, target](SweepRow & row) {
                                row.bits = target;
                                row.predicted_kl = quarter_grid_min_kl(fs, target);
                                if (!std::isfinite(row.predicted_kl)) row.note = "no feasible quarter-bit allocation";
                            }});
        }
    }
    return run_row_jobs(jobs);
}

} // namespace qlab
