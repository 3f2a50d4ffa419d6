#pragma once

namespace qlab::special {

double log_beta(double a, double b);

// Regularised incomplete beta I_x(a, b). `y` must equal 1 - x; passing it
// separately keeps precision when x is close to 1.
double incomplete_beta(double a, double b, double x, double y);
// As above with log B(a, b) supplied by the caller.
double incomplete_beta(double a, double b, double x, double y, double log_beta_ab);

// Standard normal lower-tail probability and its inverse (to ~1e-15).
double normal_cdf(double x);
double normal_ppf(double p);

inline constexpr double euler_gamma = 0.57721566490153286061;
inline constexpr double pi = 3.14159265358979323846;

} // namespace qlab::special
