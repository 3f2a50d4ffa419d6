#include "qlab/distributions.hpp"

#include "qlab/error.hpp"
#include "qlab/rng.hpp"
#include "qlab/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace qlab {

using special::pi;

std::string to_string(Family f) {
    switch (f) {
        case Family::Normal: return "normal";
        case Family::Laplace: return "laplace";
        case Family::StudentT: return "student-t";
    }
    return "?";
}

Family parse_family(const std::string & name) {
    if (name == "normal") return Family::Normal;
    if (name == "laplace") return Family::Laplace;
    if (name == "student-t" || name == "t" || name == "studentt") return Family::StudentT;
    fail(ErrorKind::InvalidArgument, "unknown distribution family '" + name + "'");
}

Distribution::Distribution(Family family, double scale, double dof)
    : family_(family), scale_(scale), dof_(dof), log_beta_half_(0.0) {
    require(std::isfinite(scale) && scale > 0.0, ErrorKind::Domain, "distribution scale must be positive");
    switch (family) {
        case Family::Normal:
        case Family::Laplace:
            dof_ = 0.0;
            break;
        case Family::StudentT:
            require(std::isfinite(dof) && dof > 0.0, ErrorKind::Domain, "Student-t dof must be positive");
            log_beta_half_ = special::log_beta(0.5, 0.5 * dof);
            break;
    }
}

Distribution Distribution::normal(double scale) { return Distribution(Family::Normal, scale, 0.0); }
Distribution Distribution::laplace(double scale) { return Distribution(Family::Laplace, scale, 0.0); }
Distribution Distribution::student_t(double dof, double scale) { return Distribution(Family::StudentT, scale, dof); }

Distribution Distribution::unit_rms(Family family, double dof) {
    switch (family) {
        case Family::Normal: return normal(1.0);
        case Family::Laplace: return laplace(1.0 / std::sqrt(2.0));
        case Family::StudentT:
            require(dof > 2.0, ErrorKind::Domain, "unit-RMS Student-t needs dof > 2");
            return student_t(dof, std::sqrt((dof - 2.0) / dof));
    }
    return normal(1.0);
}

Distribution Distribution::with_scale(double scale) const { return Distribution(family_, scale, dof_); }

std::string describe(const Distribution & d) {
    std::ostringstream os;
    os << to_string(d.family()) << "(s=" << d.scale();
    if (d.family() == Family::StudentT) os << ",nu=" << d.dof();
    os << ")";
    return os.str();
}

namespace {

// Standardised (scale 1) upper tail for x >= 0.
double standard_sf(const Distribution & d, double x) {
    switch (d.family()) {
        case Family::Normal: return 0.5 * std::erfc(x / std::sqrt(2.0));
        case Family::Laplace: return 0.5 * std::exp(-x);
        case Family::StudentT: {
            const double nu = d.dof();
            if (std::isinf(x)) return 0.0;
            const double x2 = x * x;
            return 0.5 * special::incomplete_beta(0.5 * nu, 0.5, nu / (nu + x2), x2 / (nu + x2), d.log_beta_half());
        }
    }
    return 0.0;
}

double standard_pdf(const Distribution & d, double x) {
    switch (d.family()) {
        case Family::Normal: return std::exp(-0.5 * std::log(2.0 * pi) - 0.5 * x * x);
        case Family::Laplace: return 0.5 * std::exp(-std::fabs(x));
        case Family::StudentT: {
            const double nu = d.dof();
            return std::exp(-0.5 * std::log(nu) - d.log_beta_half() -
                            0.5 * (nu + 1.0) * std::log1p(x * x / nu));
        }
    }
    return 0.0;
}

// Student-t upper-tail inverse for q in (0, 0.5), scale 1. Newton iteration on
// log sf(e^u) in u = log x, safeguarded by bisection once bracketed.
double student_isf(const Distribution & unit, double q) {
    const double nu = unit.dof();
    if (nu == 1.0) return std::tan(pi * (0.5 - q));
    if (nu == 2.0) return (1.0 - 2.0 * q) / std::sqrt(2.0 * q * (1.0 - q));

    const double z = -special::normal_ppf(q);
    double x = z + (z * z * z + z) / (4.0 * nu);
    if (!(x > 0.0) || !std::isfinite(x)) x = std::max(z, 1e-3);

    const double log_q = std::log(q);
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    double u = std::log(x);
    for (int it = 0; it < 300; ++it) {
        const double xv = std::exp(u);
        const double s = standard_sf(unit, xv);
        const double f = std::log(s) - log_q;
        if (f == 0.0) break;
        if (f > 0.0) {
            lo = u;
        } else {
            hi = u;
        }
        const double slope = -xv * standard_pdf(unit, xv) / s;
        double next = u - f / slope;
        if (!std::isfinite(next)) next = f > 0.0 ? u + 2.0 : u - 2.0;
        if (std::isfinite(lo) && std::isfinite(hi)) {
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        } else {
            next = std::clamp(next, u - 4.0, u + 4.0);
        }
        const double step = next - u;
        u = next;
        if (std::fabs(step) < 1e-14) break;
        if (std::isfinite(lo) && std::isfinite(hi) && hi - lo < 1e-15) break;
    }
    return std::exp(u);
}

double standard_isf(const Distribution & d, double q) {
    // q in (0, 0.5]
    if (q == 0.5) return 0.0;
    switch (d.family()) {
        case Family::Normal: return -special::normal_ppf(q);
        case Family::Laplace: return -std::log(2.0 * q);
        case Family::StudentT: return student_isf(d, q);
    }
    return 0.0;
}

} // namespace

double pdf(const Distribution & d, double x) { return standard_pdf(d, x / d.scale()) / d.scale(); }

double sf(const Distribution & d, double x) {
    const double z = x / d.scale();
    if (z >= 0.0) return standard_sf(d, z);
    return 1.0 - standard_sf(d, -z);
}

double cdf(const Distribution & d, double x) {
    const double z = x / d.scale();
    if (z <= 0.0) return standard_sf(d, -z);
    return 1.0 - standard_sf(d, z);
}

double isf(const Distribution & d, double q) {
    require(q > 0.0 && q < 1.0, ErrorKind::Domain, "isf probability must lie in (0, 1)");
    if (q <= 0.5) return d.scale() * standard_isf(d, q);
    return -d.scale() * standard_isf(d, 1.0 - q);
}

double ppf(const Distribution & d, double p) {
    require(p > 0.0 && p < 1.0, ErrorKind::Domain, "ppf probability must lie in (0, 1)");
    if (p == 0.5) return 0.0;
    if (p < 0.5) return -d.scale() * standard_isf(d, p);
    return d.scale() * standard_isf(d, 1.0 - p);
}

std::vector<float> sample(const Distribution & d, std::size_t n, uint64_t seed) {
    const CounterRng rng(seed);
    std::vector<float> out(n);
    const auto count = static_cast<int64_t>(n);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < count; ++i) {
        out[static_cast<std::size_t>(i)] = static_cast<float>(ppf(d, rng.uniform(static_cast<uint64_t>(i))));
    }
    return out;
}

double rms(const Distribution & d) {
    switch (d.family()) {
        case Family::Normal: return d.scale();
        case Family::Laplace: return std::sqrt(2.0) * d.scale();
        case Family::StudentT:
            require(d.dof() > 2.0, ErrorKind::Domain, "Student-t RMS needs dof > 2");
            return std::sqrt(d.dof() / (d.dof() - 2.0)) * d.scale();
    }
    return 0.0;
}

double expected_absmax(const Distribution & d, std::size_t block_size) {
    require(block_size >= 2, ErrorKind::Domain, "expected_absmax needs block size >= 2");
    const double b = static_cast<double>(block_size);
    const auto log_term_ok = [&] {
        require(block_size > static_cast<std::size_t>(std::ceil(pi)), ErrorKind::Domain,
                "expected_absmax approximation needs block size > ceil(pi)");
    };
    switch (d.family()) {
        case Family::Normal:
            log_term_ok();
            return std::sqrt(2.0 * std::log(b / pi)) * d.scale();
        case Family::Laplace: return (special::euler_gamma + std::log(b)) * d.scale();
        case Family::StudentT: {
            log_term_ok();
            const double nu = d.dof();
            require(nu >= 3.0, ErrorKind::Domain, "Student-t absmax approximation needs dof >= 3");
            return std::pow(2.0 * std::log(b / pi), (nu - 3.0) / (2.0 * nu)) * std::pow(b, 1.0 / nu) *
                   std::sqrt(nu / (nu - 2.0)) * d.scale();
        }
    }
    return 0.0;
}

Distribution cube_root_transform(const Distribution & d, double alpha) {
    require(alpha > 0.0 && alpha <= 1.0, ErrorKind::Domain, "power exponent alpha must lie in (0, 1]");
    if (alpha == 1.0) return d;
    const bool cube_root = alpha == 1.0 / 3.0;
    switch (d.family()) {
        case Family::Normal:
            return Distribution::normal(cube_root ? std::sqrt(3.0) * d.scale() : d.scale() / std::sqrt(alpha));
        case Family::Laplace: return Distribution::laplace(cube_root ? 3.0 * d.scale() : d.scale() / alpha);
        case Family::StudentT: {
            const double nu = d.dof();
            const double nu_prime = cube_root ? (nu - 2.0) / 3.0 : alpha * (nu + 1.0) - 1.0;
            require(nu_prime > 0.0, ErrorKind::Domain, "power transform of Student-t is improper (dof' <= 0)");
            return Distribution::student_t(nu_prime, std::sqrt(nu / nu_prime) * d.scale());
        }
    }
    return d;
}

TruncatedDistribution::TruncatedDistribution(Distribution base_, double limit_) : base(base_), limit(limit_) {
    require(limit > 0.0, ErrorKind::Domain, "truncation limit must be positive");
    require(1.0 - 2.0 * sf(base, limit) > 0.0, ErrorKind::Domain, "truncated distribution has no mass");
}

double truncated_ppf(const TruncatedDistribution & t, double p) {
    require(p > 0.0 && p < 1.0, ErrorKind::Domain, "ppf probability must lie in (0, 1)");
    if (p == 0.5) return 0.0;
    const double tail = sf(t.base, t.limit);
    const double mass = 1.0 - 2.0 * tail;
    const double upper = p > 0.5 ? 1.0 - p : p;
    const double x = isf(t.base, tail + upper * mass);
    const double clamped = std::min(x, t.limit);
    return p > 0.5 ? clamped : -clamped;
}

} // namespace qlab
