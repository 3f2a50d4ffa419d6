#include "doctest.h"
#include "oracles.hpp"

#include "qlab/distributions.hpp"
#include "qlab/error.hpp"

#include <cmath>

using namespace qlab;

namespace {

std::vector<double> probability_grid() {
    std::vector<double> ps;
    for (int i = 1; i <= 999; ++i) ps.push_back(i / 1000.0);
    return ps;
}

std::vector<Distribution> families() {
    return {Distribution::normal(1.0), Distribution::normal(2.5), Distribution::laplace(1.0),
            Distribution::laplace(0.3), Distribution::student_t(3.0, 1.0), Distribution::student_t(5.0, 2.0),
            Distribution::student_t(1.0, 1.0), Distribution::student_t(0.6667, 1.7),
            Distribution::student_t(100.0, 1.0)};
}

} // namespace

TEST_CASE("pdf at the mode") {
    CHECK(pdf(Distribution::normal(1.0), 0.0) == doctest::Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-14));
    CHECK(pdf(Distribution::laplace(1.0), 0.0) == doctest::Approx(0.5).epsilon(1e-14));
    const double expected = oracle::student_pdf(5.0, 0.0);
    CHECK(expected == doctest::Approx(0.37961).epsilon(1e-5));
    CHECK(pdf(Distribution::student_t(5.0, 1.0), 0.0) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("pdf integrates to one and is symmetric") {
    for (const auto & d : {Distribution::normal(1.3), Distribution::laplace(0.7), Distribution::student_t(5.0, 1.0)}) {
        const double mass = oracle::integrate([&](double x) { return pdf(d, x); }, -200.0, 200.0, 1e-10);
        CHECK(mass == doctest::Approx(1.0).epsilon(2e-4));
        for (double x : {0.1, 1.0, 3.7}) CHECK(pdf(d, x) == pdf(d, -x));
    }
}

TEST_CASE("cdf examples") {
    CHECK(cdf(Distribution::laplace(1.0), std::log(2.0)) == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(cdf(Distribution::normal(1.0), 0.0) == 0.5);
    const auto t3 = Distribution::student_t(3.0, 1.0);
    const double expected = 0.5 + oracle::integrate([](double x) { return oracle::student_pdf(3.0, x); }, 0.0, 1.0);
    CHECK(expected == doctest::Approx(0.80450).epsilon(1e-5));
    CHECK(cdf(t3, 1.0) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("ppf examples") {
    CHECK(ppf(Distribution::normal(1.0), 0.5) == 0.0);
    CHECK(ppf(Distribution::laplace(1.0), 0.75) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    const double oracle_x = oracle::bisect([](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)) - 0.841344746; },
                                           -10.0, 10.0);
    CHECK(oracle_x == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(ppf(Distribution::normal(1.0), 0.841344746) == doctest::Approx(oracle_x).epsilon(1e-12));
    CHECK_THROWS_AS(ppf(Distribution::normal(1.0), 0.0), Error);
    CHECK_THROWS_AS(ppf(Distribution::normal(1.0), 1.0), Error);
    CHECK_THROWS_AS(ppf(Distribution::normal(1.0), -0.2), Error);
}

TEST_CASE("cdf(ppf(p)) == p on a probability grid") {
    for (const auto & d : families()) {
        for (double p : probability_grid()) {
            const double x = ppf(d, p);
            INFO(describe(d) << " p=" << p);
            CHECK(std::fabs(cdf(d, x) - p) < 1e-9);
            CHECK(ppf(d, p) == doctest::Approx(-ppf(d, 1.0 - p)).epsilon(1e-12));
        }
    }
}

TEST_CASE("extreme tails invert accurately") {
    for (const auto & d : families()) {
        for (double q : {1e-12, 1e-8, 1e-4}) {
            const double x = isf(d, q);
            INFO(describe(d) << " q=" << q);
            CHECK(sf(d, x) == doctest::Approx(q).epsilon(1e-9));
        }
    }
}

TEST_CASE("Student-t approaches Normal as dof grows") {
    const auto t = Distribution::student_t(1e6, 1.0);
    const auto n = Distribution::normal(1.0);
    for (double p : probability_grid()) CHECK(std::fabs(ppf(t, p) - ppf(n, p)) < 1e-3);
}

TEST_CASE("rms closed forms") {
    CHECK(rms(Distribution::normal(2.0)) == 2.0);
    CHECK(rms(Distribution::laplace(1.0)) == doctest::Approx(std::sqrt(2.0)));
    CHECK(rms(Distribution::student_t(5.0, 1.0)) == doctest::Approx(1.29099).epsilon(1e-5));
    CHECK_THROWS_AS(rms(Distribution::student_t(2.0, 1.0)), Error);
    for (Family f : {Family::Normal, Family::Laplace, Family::StudentT}) {
        CHECK(rms(Distribution::unit_rms(f, 5.0)) == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("sampling is deterministic and matches the RMS") {
    const auto d = Distribution::laplace(0.5);
    CHECK(sample(d, 5, 7) == sample(d, 5, 7));
    CHECK(sample(d, 5, 7) != sample(d, 5, 8));
    CHECK(oracle::rms(sample(Distribution::normal(1.0), 1u << 20, 0)) == doctest::Approx(1.0).epsilon(0.005));
    CHECK(oracle::rms(sample(Distribution::student_t(5.0, 1.0), 1u << 20, 1)) ==
          doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(0.01));
}

TEST_CASE("expected_absmax closed forms") {
    CHECK(expected_absmax(Distribution::laplace(1.0), 64) == doctest::Approx(0.5772156649 + std::log(64.0)));
    CHECK(expected_absmax(Distribution::laplace(1.0), 64) == doctest::Approx(4.73612).epsilon(1e-5));
    CHECK(expected_absmax(Distribution::normal(1.0), 64) == doctest::Approx(std::sqrt(2.0 * std::log(64.0 / M_PI))).epsilon(1e-14));
    CHECK(expected_absmax(Distribution::normal(1.0), 64) == doctest::Approx(2.45526).epsilon(1e-5));
    CHECK(expected_absmax(Distribution::normal(2.0), 64) == doctest::Approx(2.0 * expected_absmax(Distribution::normal(1.0), 64)));
    CHECK_THROWS_AS(expected_absmax(Distribution::normal(1.0), 4), Error);
    CHECK_THROWS_AS(expected_absmax(Distribution::normal(1.0), 1), Error);
    CHECK_THROWS_AS(expected_absmax(Distribution::student_t(2.5, 1.0), 64), Error);
    CHECK_NOTHROW(expected_absmax(Distribution::laplace(1.0), 2));
}

TEST_CASE("expected_absmax agrees with Monte Carlo where the approximation is tight") {
    // B=64 and B=256, Laplace and moderate-dof Student-t; the full grid is an acceptance criterion.
    for (const auto & d : {Distribution::laplace(1.0), Distribution::student_t(5.0, 1.0)}) {
        for (std::size_t block : {64u, 256u}) {
            const auto x = sample(d, 1u << 20, 3);
            double total = 0.0;
            const std::size_t blocks = x.size() / block;
            for (std::size_t b = 0; b < blocks; ++b) {
                float m = 0.0f;
                for (std::size_t i = 0; i < block; ++i) m = std::max(m, std::fabs(x[b * block + i]));
                total += m;
            }
            CHECK(expected_absmax(d, block) == doctest::Approx(total / blocks).epsilon(0.05));
        }
    }
}

TEST_CASE("cube_root_transform") {
    const auto n = cube_root_transform(Distribution::normal(2.0), 1.0 / 3.0);
    CHECK(n.family() == Family::Normal);
    CHECK(n.scale() == 2.0 * std::sqrt(3.0));
    const auto t = cube_root_transform(Distribution::student_t(5.0, 1.0), 1.0 / 3.0);
    CHECK(t.dof() == 1.0);
    CHECK(t.scale() == std::sqrt(5.0));
    for (const auto & d : families()) CHECK(cube_root_transform(d, 1.0) == d);
    CHECK_THROWS_AS(cube_root_transform(Distribution::student_t(3.0, 1.0), 0.2), Error);
    CHECK_THROWS_AS(cube_root_transform(Distribution::normal(1.0), 0.0), Error);
}

TEST_CASE("transformed pdf is proportional to a power of the source pdf") {
    for (const auto & d : {Distribution::normal(1.5), Distribution::laplace(0.8), Distribution::student_t(5.0, 1.0),
                           Distribution::student_t(12.0, 0.5)}) {
        for (double alpha : {1.0 / 3.0, 0.5, 0.8}) {
            const auto dp = cube_root_transform(d, alpha);
            double lo = 1e300;
            double hi = -1e300;
            for (int i = 0; i < 100; ++i) {
                const double x = -5.0 + 0.1 * i + 0.013;
                const double ratio = pdf(dp, x) / std::pow(pdf(d, x), alpha);
                lo = std::min(lo, ratio);
                hi = std::max(hi, ratio);
            }
            CHECK((hi - lo) / lo < 1e-6);
        }
    }
}

TEST_CASE("truncated_ppf") {
    CHECK(truncated_ppf({Distribution::normal(1.0), INFINITY}, 0.5) == 0.0);
    CHECK(truncated_ppf({Distribution::normal(1.0), INFINITY}, 0.9) == doctest::Approx(ppf(Distribution::normal(1.0), 0.9)));
    CHECK(truncated_ppf({Distribution::laplace(1.0), std::log(2.0)}, 0.5) == 0.0);
    CHECK(truncated_ppf({Distribution::normal(1.0), 1.0}, 0.9999) <= 1.0);
    CHECK(truncated_ppf({Distribution::normal(1.0), 1.0}, 0.0001) >= -1.0);
    // Uniform limit: a very wide Normal truncated to [-1, 1] is nearly uniform.
    CHECK(truncated_ppf({Distribution::normal(1e4), 1.0}, 0.75) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK_THROWS_AS(TruncatedDistribution(Distribution::normal(1.0), 0.0), Error);
}
