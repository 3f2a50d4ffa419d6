#include "qlab/kernels.hpp"

#include "qlab/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace qlab::kernels {

namespace {

inline Code encode_one(const Codebook & cb, float theta, double scale) {
    if (scale == 0.0) return cb.nearest(0.0);
    return cb.nearest(static_cast<double>(theta) / scale);
}

inline std::size_t group_count(std::size_t n, std::size_t group) { return group == 0 ? 0 : (n + group - 1) / group; }

template <class Body>
double chunked_sum(std::size_t n, Body && body) {
    const std::size_t chunks = (n + reduction_chunk - 1) / reduction_chunk;
    std::vector<double> partial(chunks, 0.0);
    const auto count = static_cast<int64_t>(chunks);
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < count; ++c) {
        const std::size_t lo = static_cast<std::size_t>(c) * reduction_chunk;
        const std::size_t hi = std::min(n, lo + reduction_chunk);
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += body(i);
        partial[static_cast<std::size_t>(c)] = s;
    }
    double total = 0.0;
    for (double s : partial) total += s;
    return total;
}

} // namespace

void configure_threads_from_env() {
#ifdef _OPENMP
    if (const char * env = std::getenv("QLAB_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) omp_set_num_threads(n);
    }
#endif
}

std::vector<Code> encode(const Codebook & cb, std::span<const float> values) {
    std::vector<Code> out(values.size());
    const auto n = static_cast<int64_t>(values.size());
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = cb.nearest(values[i]);
    return out;
}

std::vector<double> group_norms(NormKind kind, std::span<const float> theta, std::size_t group) {
    const std::size_t groups = group_count(theta.size(), group);
    std::vector<double> out(groups);
    if (groups == 1) {
        // A single group (tensor RMS) is reduced in parallel instead.
        if (kind == NormKind::RMS) {
            out[0] = std::sqrt(sum_squares(theta) / static_cast<double>(theta.size()));
        } else {
            out[0] = compute_norm(kind, theta);
        }
        return out;
    }
    const auto count = static_cast<int64_t>(groups);
#pragma omp parallel for schedule(static)
    for (int64_t g = 0; g < count; ++g) {
        const std::size_t lo = static_cast<std::size_t>(g) * group;
        const std::size_t len = std::min(group, theta.size() - lo);
        out[static_cast<std::size_t>(g)] = compute_norm(kind, theta.subspan(lo, len));
    }
    return out;
}

void encode_groups(const Codebook & cb, std::span<const float> theta, std::size_t group, std::span<const float> scales,
                   double element_scale, std::span<Code> codes) {
    const auto n = static_cast<int64_t>(theta.size());
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const double scale = static_cast<double>(scales[static_cast<std::size_t>(i) / group]) * element_scale;
        codes[i] = encode_one(cb, theta[i], scale);
    }
}

void decode_groups(const Codebook & cb, std::span<const Code> codes, std::size_t group, std::span<const float> scales,
                   double element_scale, std::span<float> out) {
    const auto n = static_cast<int64_t>(codes.size());
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const double scale = static_cast<double>(scales[static_cast<std::size_t>(i) / group]) * element_scale;
        out[i] = static_cast<float>(scale * cb.value(codes[i]));
    }
}

double sum_squares(std::span<const float> x) {
    return chunked_sum(x.size(), [&](std::size_t i) {
        const double v = x[i];
        return v * v;
    });
}

double squared_error(std::span<const float> a, std::span<const float> b) {
    return chunked_sum(a.size(), [&](std::size_t i) {
        const double e = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        return e * e;
    });
}

double weighted_squared_error(std::span<const float> a, std::span<const float> b, std::span<const float> w) {
    return chunked_sum(a.size(), [&](std::size_t i) {
        const double e = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        return static_cast<double>(w[i]) * e * e;
    });
}

std::vector<int64_t> grid_quantise(std::span<const float> theta, double delta) {
    std::vector<int64_t> out(theta.size());
    const auto n = static_cast<int64_t>(theta.size());
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = static_cast<int64_t>(std::nearbyint(static_cast<double>(theta[i]) / delta));
    return out;
}

std::vector<uint64_t> histogram(std::span<const int64_t> symbols, int64_t offset, std::size_t k) {
    std::vector<uint64_t> counts(k, 0);
    if (k > (std::size_t{1} << 16)) return serial::histogram(symbols, offset, k);
    const auto n = static_cast<int64_t>(symbols.size());
#pragma omp parallel
    {
        std::vector<uint64_t> local(k, 0);
#pragma omp for schedule(static) nowait
        for (int64_t i = 0; i < n; ++i) ++local[static_cast<std::size_t>(symbols[i] - offset)];
#pragma omp critical
        for (std::size_t j = 0; j < k; ++j) counts[j] += local[j];
    }
    return counts;
}

namespace serial {

std::vector<Code> encode(const Codebook & cb, std::span<const float> values) {
    std::vector<Code> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        // Linear scan: the first strictly-closer point wins, so ties keep the smaller one.
        Code best = 0;
        double best_d = std::fabs(static_cast<double>(values[i]) - cb.value(0));
        for (std::size_t j = 1; j < cb.size(); ++j) {
            const double d = std::fabs(static_cast<double>(values[i]) - cb.value(static_cast<Code>(j)));
            if (d < best_d) {
                best_d = d;
                best = static_cast<Code>(j);
            }
        }
        out[i] = best;
    }
    return out;
}

std::vector<double> group_norms(NormKind kind, std::span<const float> theta, std::size_t group) {
    std::vector<double> out;
    for (std::size_t lo = 0; lo < theta.size(); lo += group) {
        const auto block = theta.subspan(lo, std::min(group, theta.size() - lo));
        double v = 0.0;
        switch (kind) {
            case NormKind::RMS: {
                double s = 0.0;
                for (float x : block) s += static_cast<double>(x) * x;
                v = std::sqrt(s / static_cast<double>(block.size()));
                break;
            }
            case NormKind::Absmax:
                for (float x : block) v = std::max(v, static_cast<double>(std::fabs(x)));
                break;
            case NormKind::Signmax: {
                float best = 0.0f;
                for (float x : block) {
                    if (std::fabs(x) > std::fabs(best)) best = x;
                }
                v = best;
                break;
            }
        }
        out.push_back(v);
    }
    return out;
}

void encode_groups(const Codebook & cb, std::span<const float> theta, std::size_t group, std::span<const float> scales,
                   double element_scale, std::span<Code> codes) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double scale = static_cast<double>(scales[i / group]) * element_scale;
        if (scale == 0.0) {
            codes[i] = serial::encode(cb, std::vector<float>{0.0f})[0];
        } else {
            // Compare distances in the normalised domain, as the parallel kernel does.
            const double v = static_cast<double>(theta[i]) / scale;
            Code best = 0;
            double best_d = std::fabs(v - cb.value(0));
            for (std::size_t j = 1; j < cb.size(); ++j) {
                const double d = std::fabs(v - cb.value(static_cast<Code>(j)));
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<Code>(j);
                }
            }
            codes[i] = best;
        }
    }
}

void decode_groups(const Codebook & cb, std::span<const Code> codes, std::size_t group, std::span<const float> scales,
                   double element_scale, std::span<float> out) {
    for (std::size_t i = 0; i < codes.size(); ++i) {
        out[i] = static_cast<float>(static_cast<double>(scales[i / group]) * element_scale * cb.value(codes[i]));
    }
}

double sum_squares(std::span<const float> x) {
    double s = 0.0;
    for (float v : x) s += static_cast<double>(v) * v;
    return s;
}

double squared_error(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double e = static_cast<double>(a[i]) - b[i];
        s += e * e;
    }
    return s;
}

double weighted_squared_error(std::span<const float> a, std::span<const float> b, std::span<const float> w) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double e = static_cast<double>(a[i]) - b[i];
        s += static_cast<double>(w[i]) * e * e;
    }
    return s;
}

std::vector<int64_t> grid_quantise(std::span<const float> theta, double delta) {
    std::vector<int64_t> out;
    out.reserve(theta.size());
    for (float x : theta) {
        // explicit ties-to-even
        const double v = static_cast<double>(x) / delta;
        double r = std::floor(v);
        const double frac = v - r;
        if (frac > 0.5 || (frac == 0.5 && std::fmod(r, 2.0) != 0.0)) r += 1.0;
        out.push_back(static_cast<int64_t>(r));
    }
    return out;
}

std::vector<uint64_t> histogram(std::span<const int64_t> symbols, int64_t offset, std::size_t k) {
    std::vector<uint64_t> counts(k, 0);
    for (int64_t s : symbols) ++counts[static_cast<std::size_t>(s - offset)];
    return counts;
}

} // namespace serial

} // namespace qlab::kernels
