#include "qlab/codebook.hpp"

#include "qlab/error.hpp"
#include "qlab/kernels.hpp"
#include "qlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace qlab {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Symmetric: return "symmetric";
        case Variant::Asymmetric: return "asymmetric";
        case Variant::Signmax: return "signmax";
        case Variant::Unconstrained: return "unconstrained";
    }
    return "?";
}

Variant parse_variant(const std::string & name) {
    if (name == "symmetric") return Variant::Symmetric;
    if (name == "asymmetric") return Variant::Asymmetric;
    if (name == "signmax") return Variant::Signmax;
    if (name == "unconstrained") return Variant::Unconstrained;
    fail(ErrorKind::InvalidArgument, "unknown codebook variant '" + name + "'");
}

std::string to_string(CodebookKind k) {
    switch (k) {
        case CodebookKind::PowerAlpha: return "power-alpha";
        case CodebookKind::Absmax: return "absmax";
        case CodebookKind::Int: return "int";
        case CodebookKind::Float: return "float";
        case CodebookKind::LloydMax: return "lloyd-max";
        case CodebookKind::Custom: return "custom";
    }
    return "?";
}

Codebook::Codebook() : Codebook({-1.0f, 1.0f}, Variant::Symmetric) {}

Codebook::Codebook(std::vector<float> points, Variant variant, CodebookSource source, double design_rms)
    : points_(std::move(points)), variant_(variant), source_(source), design_rms_(design_rms) {
    const std::size_t k = points_.size();
    require(k >= 2 && k <= max_codepoints, ErrorKind::InvalidArgument, "codebook needs between 2 and 65536 points");
    for (std::size_t i = 0; i < k; ++i) {
        require(std::isfinite(points_[i]), ErrorKind::InvalidArgument, "codebook points must be finite");
        if (i > 0) require(points_[i - 1] < points_[i], ErrorKind::InvalidArgument, "codebook points must be strictly increasing");
    }
    const bool has_zero = std::binary_search(points_.begin(), points_.end(), 0.0f);
    switch (variant_) {
        case Variant::Symmetric:
            require(!has_zero, ErrorKind::InvalidArgument, "symmetric codebook must not contain 0");
            for (std::size_t i = 0; i < k; ++i) {
                require(points_[i] == -points_[k - 1 - i], ErrorKind::InvalidArgument, "symmetric codebook is not mirrored");
            }
            break;
        case Variant::Asymmetric:
            require(has_zero, ErrorKind::InvalidArgument, "asymmetric codebook must contain 0");
            break;
        case Variant::Signmax:
            require(has_zero && points_.back() == 1.0f, ErrorKind::InvalidArgument,
                    "signmax codebook must contain 0 and have maximum 1");
            break;
        case Variant::Unconstrained: break;
    }
    thresholds_.resize(k - 1);
    for (std::size_t i = 0; i + 1 < k; ++i) {
        thresholds_[i] = 0.5 * (static_cast<double>(points_[i]) + static_cast<double>(points_[i + 1]));
    }
}

int Codebook::storage_bits() const {
    int b = 0;
    while ((std::size_t{1} << b) < size()) ++b;
    return b;
}

Code Codebook::nearest(double x) const {
    // First threshold >= x: a value exactly on a midpoint maps to the lower point.
    const auto it = std::lower_bound(thresholds_.begin(), thresholds_.end(), x);
    return static_cast<Code>(it - thresholds_.begin());
}

Codebook Codebook::scaled(double factor) const {
    require(factor > 0.0 && std::isfinite(factor), ErrorKind::InvalidArgument, "codebook scale factor must be positive");
    std::vector<float> p(points_.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<float>(points_[i] * factor);
    const Variant v = variant_ == Variant::Signmax ? Variant::Unconstrained : variant_;
    return Codebook(std::move(p), v, source_, design_rms_ * factor);
}

std::string Codebook::describe() const {
    std::ostringstream os;
    os << to_string(source_.kind) << "/" << to_string(variant_) << "/k=" << size();
    return os.str();
}

namespace {

std::vector<float> to_float(const std::vector<double> & v) { return {v.begin(), v.end()}; }

// Mid-quantiles of `inverse_cdf` over m equal-probability slots.
template <class InverseCdf>
std::vector<double> mid_quantiles(std::size_t m, InverseCdf && inverse_cdf) {
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        out[i] = inverse_cdf((static_cast<double>(i) + 0.5) / static_cast<double>(m));
    }
    return out;
}

// Point nearest zero of a sorted mid-quantile set; ties go to the upper point.
void snap_zero(std::vector<double> & pts) {
    pts[pts.size() / 2] = 0.0;
}

double design_rms_of(const Distribution & d) {
    if (d.family() == Family::StudentT && d.dof() <= 2.0) return std::numeric_limits<double>::quiet_NaN();
    return rms(d);
}

} // namespace

Codebook build_power_alpha_codebook(const Distribution & d, std::size_t k, double alpha, Variant variant) {
    require(k >= 2, ErrorKind::InvalidArgument, "codebook needs k >= 2");
    const Distribution dp = cube_root_transform(d, alpha);
    CodebookSource src{CodebookKind::PowerAlpha, d.family(), d.dof(), alpha, 0, 0, 0, 0};
    std::vector<double> pts;
    switch (variant) {
        case Variant::Symmetric: {
            require(k % 2 == 0, ErrorKind::InvalidArgument, "symmetric codebook needs an even number of points");
            const std::size_t half = k / 2;
            std::vector<double> pos(half);
            for (std::size_t i = 0; i < half; ++i) {
                // upper tail probability of the i-th positive mid-quantile
                pos[i] = isf(dp, 0.5 - (static_cast<double>(i) + 0.5) / static_cast<double>(k));
            }
            for (std::size_t i = half; i-- > 0;) pts.push_back(-pos[i]);
            for (std::size_t i = 0; i < half; ++i) pts.push_back(pos[i]);
            break;
        }
        case Variant::Asymmetric:
            pts = mid_quantiles(k, [&](double p) { return ppf(dp, p); });
            snap_zero(pts);
            break;
        default: fail(ErrorKind::InvalidArgument, "power-alpha codebooks are symmetric or asymmetric");
    }
    return Codebook(to_float(pts), variant, src, design_rms_of(d));
}

Codebook build_absmax_codebook(const Distribution & d, std::size_t k, std::size_t block_size, Variant variant,
                               double alpha) {
    const double block_max = expected_absmax(d, block_size);
    const Distribution normalised = d.with_scale(d.scale() / block_max);
    const TruncatedDistribution interior(cube_root_transform(normalised, alpha), 1.0);
    const auto quantile = [&](double p) { return truncated_ppf(interior, p); };
    CodebookSource src{CodebookKind::Absmax, d.family(), d.dof(), alpha, block_size, 0, 0, 0};

    std::vector<double> pts;
    switch (variant) {
        case Variant::Symmetric: {
            require(k >= 4 && k % 2 == 0, ErrorKind::InvalidArgument,
                    "symmetric absmax codebook needs an even k >= 4");
            const std::size_t m = k - 2;
            const std::size_t half = m / 2;
            std::vector<double> pos(half);
            for (std::size_t i = 0; i < half; ++i) {
                pos[i] = quantile(0.5 + (static_cast<double>(i) + 0.5) / static_cast<double>(m));
            }
            pts.push_back(-1.0);
            for (std::size_t i = half; i-- > 0;) pts.push_back(-pos[i]);
            for (std::size_t i = 0; i < half; ++i) pts.push_back(pos[i]);
            pts.push_back(1.0);
            break;
        }
        case Variant::Asymmetric: {
            require(k >= 3, ErrorKind::InvalidArgument, "asymmetric absmax codebook needs k >= 3");
            auto mid = mid_quantiles(k - 2, quantile);
            snap_zero(mid);
            pts.push_back(-1.0);
            pts.insert(pts.end(), mid.begin(), mid.end());
            pts.push_back(1.0);
            break;
        }
        case Variant::Signmax: {
            require(k >= 3, ErrorKind::InvalidArgument, "signmax codebook needs k >= 3");
            pts = mid_quantiles(k - 1, quantile);
            snap_zero(pts);
            pts.push_back(1.0);
            break;
        }
        case Variant::Unconstrained: fail(ErrorKind::InvalidArgument, "absmax codebooks cannot be unconstrained");
    }
    return Codebook(to_float(pts), variant, src);
}

Codebook build_int_codebook(int bits, Variant variant) {
    require(bits >= 2 && bits <= 8, ErrorKind::InvalidArgument, "integer codebooks support 2..8 bits");
    const int half = 1 << (bits - 1);
    CodebookSource src{CodebookKind::Int, Family::Normal, 0.0, 0.0, 0, bits, 0, 0};
    std::vector<double> pts;
    double design = 0.0;
    switch (variant) {
        case Variant::Asymmetric:
            for (int i = -half; i < half; ++i) pts.push_back(static_cast<double>(i) / half);
            design = (half - 1) / std::sqrt(3.0) / half;
            break;
        case Variant::Symmetric: {
            const double denom = 2.0 * half - 1.0;
            for (int i = -half; i < half; ++i) pts.push_back((2.0 * i + 1.0) / denom);
            design = 1.0 / std::sqrt(3.0);
            break;
        }
        case Variant::Signmax:
            for (int i = -half; i < half; ++i) pts.push_back(static_cast<double>(i) / (half - 1));
            design = 1.0 / std::sqrt(3.0);
            break;
        case Variant::Unconstrained: fail(ErrorKind::InvalidArgument, "integer codebooks cannot be unconstrained");
    }
    return Codebook(to_float(pts), variant, src, design);
}

Codebook build_float_codebook(int exp_bits, int mant_bits) {
    require(exp_bits >= 1 && mant_bits >= 0 && exp_bits + mant_bits + 1 <= 8, ErrorKind::InvalidArgument,
            "float codebooks need E >= 1, M >= 0 and E + M + 1 <= 8");
    const int bias = (1 << (exp_bits - 1)) - 1;
    const int mant_count = 1 << mant_bits;
    std::vector<double> mags;
    for (int e = 0; e < (1 << exp_bits); ++e) {
        for (int m = 0; m < mant_count; ++m) {
            const double frac = static_cast<double>(m) / mant_count;
            mags.push_back(e == 0 ? std::ldexp(frac, 1 - bias) : std::ldexp(1.0 + frac, e - bias));
        }
    }
    const double top = mags.back();
    std::vector<double> pts;
    for (std::size_t i = mags.size(); i-- > 1;) pts.push_back(-mags[i] / top);
    for (double m : mags) pts.push_back(m / top);
    CodebookSource src{CodebookKind::Float, Family::Normal, 0.0, 0.0, 0, 1 + exp_bits + mant_bits, exp_bits, mant_bits};
    return Codebook(to_float(pts), Variant::Asymmetric, src, 1.0 / top);
}

LloydMaxResult lloyd_max_trace(std::span<const float> data, std::size_t k, std::span<const float> weights,
                               const LloydMaxOptions & options) {
    const std::size_t n = data.size();
    require(k >= 1, ErrorKind::InvalidArgument, "Lloyd-Max needs k >= 1");
    require(n >= k, ErrorKind::InvalidArgument, "Lloyd-Max needs at least k data points");
    require(weights.empty() || weights.size() == n, ErrorKind::InvalidArgument, "weights must match data length");

    struct Item {
        double x;
        double w;
    };
    std::vector<Item> items(n);
    double total_w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        require(std::isfinite(data[i]), ErrorKind::Input, "Lloyd-Max data must be finite");
        const double w = weights.empty() ? 1.0 : static_cast<double>(weights[i]);
        require(w >= 0.0 && std::isfinite(w), ErrorKind::InvalidArgument, "weights must be nonnegative");
        items[i] = {data[i], w};
        total_w += w;
    }
    require(total_w > 0.0, ErrorKind::InvalidArgument, "weights must have a positive sum");
    std::sort(items.begin(), items.end(), [](const Item & a, const Item & b) { return a.x < b.x; });

    std::vector<double> prefix_w(n + 1, 0.0), prefix_wx(n + 1, 0.0);
    double sum_wx2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        prefix_w[i + 1] = prefix_w[i] + items[i].w;
        prefix_wx[i + 1] = prefix_wx[i] + items[i].w * items[i].x;
        sum_wx2 += items[i].w * items[i].x * items[i].x;
    }
    const double design = std::sqrt(sum_wx2 / total_w);

    std::vector<double> centres;
    centres.reserve(k);
    if (options.init == LloydInit::UniformPM1) {
        for (std::size_t j = 0; j < k; ++j) centres.push_back(-1.0 + (2.0 * j + 1.0) / static_cast<double>(k));
    } else {
        // Weighted k-means++ seeding driven by the counter-based generator.
        const CounterRng rng(options.seed);
        uint64_t counter = 0;
        const auto pick = [&](const std::vector<double> & mass, double total) {
            double target = rng.uniform(counter++) * total;
            for (std::size_t i = 0; i < n; ++i) {
                target -= mass[i];
                if (target <= 0.0 && mass[i] > 0.0) return i;
            }
            for (std::size_t i = n; i-- > 0;) {
                if (mass[i] > 0.0) return i;
            }
            return std::size_t{0};
        };
        std::vector<double> mass(n);
        for (std::size_t i = 0; i < n; ++i) mass[i] = items[i].w;
        centres.push_back(items[pick(mass, total_w)].x);
        std::vector<double> nearest_d2(n, std::numeric_limits<double>::infinity());
        while (centres.size() < k) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double dx = items[i].x - centres.back();
                nearest_d2[i] = std::min(nearest_d2[i], dx * dx);
                mass[i] = items[i].w * nearest_d2[i];
                total += mass[i];
            }
            require(total > 0.0, ErrorKind::InvalidArgument, "Lloyd-Max needs at least k distinct weighted values");
            centres.push_back(items[pick(mass, total)].x);
        }
        std::sort(centres.begin(), centres.end());
    }

    // cluster j owns sorted items [bounds[j], bounds[j + 1])
    std::vector<std::size_t> bounds(k + 1, 0), previous;
    const auto assign = [&] {
        bounds[0] = 0;
        bounds[k] = n;
        for (std::size_t j = 0; j + 1 < k; ++j) {
            const double t = 0.5 * (centres[j] + centres[j + 1]);
            const auto it = std::upper_bound(items.begin(), items.end(), t,
                                             [](double v, const Item & it2) { return v < it2.x; });
            bounds[j + 1] = std::max(bounds[j], static_cast<std::size_t>(it - items.begin()));
        }
    };
    const auto distortion = [&] {
        double e = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t i = bounds[j]; i < bounds[j + 1]; ++i) {
                const double dx = items[i].x - centres[j];
                e += items[i].w * dx * dx;
            }
        }
        return e;
    };

    LloydMaxResult result;
    for (int iter = 0; iter < options.max_iterations; ++iter) {
        assign();
        std::size_t changed = n;
        if (!previous.empty()) {
            std::size_t kept = 0;
            for (std::size_t j = 0; j < k; ++j) {
                const std::size_t lo = std::max(bounds[j], previous[j]);
                const std::size_t hi = std::min(bounds[j + 1], previous[j + 1]);
                if (hi > lo) kept += hi - lo;
            }
            changed = n - kept;
        }
        previous = bounds;

        bool reseeded = false;
        for (std::size_t j = 0; j < k; ++j) {
            const double w = prefix_w[bounds[j + 1]] - prefix_w[bounds[j]];
            if (w > 0.0) centres[j] = (prefix_wx[bounds[j + 1]] - prefix_wx[bounds[j]]) / w;
        }
        for (std::size_t j = 0; j < k; ++j) {
            const double w = prefix_w[bounds[j + 1]] - prefix_w[bounds[j]];
            if (w > 0.0) continue;
            // Empty cluster: move it onto the datum with the largest weighted error.
            double worst = -1.0;
            std::size_t worst_i = 0;
            for (std::size_t c = 0; c < k; ++c) {
                for (std::size_t i = bounds[c]; i < bounds[c + 1]; ++i) {
                    const double dx = items[i].x - centres[c];
                    const double e = items[i].w * dx * dx;
                    if (e > worst) {
                        worst = e;
                        worst_i = i;
                    }
                }
            }
            require(worst > 0.0, ErrorKind::InvalidArgument, "Lloyd-Max needs at least k distinct weighted values");
            centres[j] = items[worst_i].x;
            reseeded = true;
        }
        result.distortion.push_back(distortion());
        result.iterations = iter + 1;
        if (reseeded) {
            std::sort(centres.begin(), centres.end());
            previous.clear();
            continue;
        }
        if (static_cast<double>(changed) / static_cast<double>(n) < options.change_tol) break;
    }

    std::sort(centres.begin(), centres.end());
    result.centroids = std::move(centres);
    result.design_rms = design;
    return result;
}

Codebook lloyd_max(std::span<const float> data, std::size_t k, std::span<const float> weights,
                   const LloydMaxOptions & options) {
    require(k >= 2, ErrorKind::InvalidArgument, "a Lloyd-Max codebook needs k >= 2");
    const auto trace = lloyd_max_trace(data, k, weights, options);
    std::vector<float> pts(k);
    for (std::size_t j = 0; j < k; ++j) {
        pts[j] = static_cast<float>(trace.centroids[j]);
        if (j > 0 && pts[j] <= pts[j - 1]) pts[j] = std::nextafter(pts[j - 1], INFINITY);
    }
    CodebookSource src{CodebookKind::LloydMax, Family::Normal, 0.0, 0.0, 0, 0, 0, 0};
    return Codebook(std::move(pts), Variant::Unconstrained, src, trace.design_rms);
}

std::vector<Code> encode(const Codebook & cb, std::span<const float> values) {
    for (float v : values) require(std::isfinite(v), ErrorKind::Input, "cannot encode a non-finite value");
    return kernels::encode(cb, values);
}

std::vector<float> decode(const Codebook & cb, std::span<const Code> indices) {
    std::vector<float> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        require(indices[i] < cb.size(), ErrorKind::Input, "code index out of range");
        out[i] = cb.value(indices[i]);
    }
    return out;
}

} // namespace qlab
