#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace qlab {

enum class Family { Normal, Laplace, StudentT };

std::string to_string(Family f);
Family parse_family(const std::string & name);

// A zero-centred member of a symmetric parametric family.
//
// `dof` is only meaningful for StudentT. Any dof > 0 is accepted so that
// power-transformed distributions (which may have dof <= 2) remain
// representable; statistics that need a finite variance check dof > 2.
class Distribution {
public:
    static Distribution normal(double scale);
    static Distribution laplace(double scale);
    static Distribution student_t(double dof, double scale);

    // Member of `family` rescaled so that rms() == 1.
    static Distribution unit_rms(Family family, double dof = 0.0);

    Family family() const { return family_; }
    double scale() const { return scale_; }
    double dof() const { return dof_; }

    Distribution with_scale(double scale) const;

    // log B(1/2, dof/2); StudentT only.
    double log_beta_half() const { return log_beta_half_; }

    bool operator==(const Distribution & other) const = default;

private:
    Distribution(Family family, double scale, double dof);

    Family family_;
    double scale_;
    double dof_;
    double log_beta_half_;
};

std::string describe(const Distribution & d);

double pdf(const Distribution & d, double x);
double cdf(const Distribution & d, double x);
// Upper-tail probability 1 - cdf, computed without cancellation.
double sf(const Distribution & d, double x);
double ppf(const Distribution & d, double p);
// Inverse of sf for q in (0, 1).
double isf(const Distribution & d, double q);

// n draws by inverse-cdf transform of a counter-based uniform stream.
std::vector<float> sample(const Distribution & d, std::size_t n, uint64_t seed);

double rms(const Distribution & d);

// Closed-form approximation of E[max_i |theta_i|] over a block of size B.
double expected_absmax(const Distribution & d, std::size_t block_size);

// Distribution whose pdf is proportional to pdf(d)^alpha. alpha = 1/3 gives
// the cube-root-density quantiser source.
Distribution cube_root_transform(const Distribution & d, double alpha = 1.0 / 3.0);

struct TruncatedDistribution {
    Distribution base;
    double limit; // support is [-limit, limit]

    TruncatedDistribution(Distribution base, double limit);
};

double truncated_ppf(const TruncatedDistribution & t, double p);

} // namespace qlab
