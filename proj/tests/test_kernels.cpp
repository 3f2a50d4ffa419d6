#include "doctest.h"

#include "qlab/kernels.hpp"
#include "qlab/outliers.hpp"
#include "qlab/scaling.hpp"

#include <omp.h>

#include <cmath>
#include <vector>

using namespace qlab;

namespace {

struct ThreadCount {
    int saved = omp_get_max_threads();
    explicit ThreadCount(int n) { omp_set_num_threads(n); }
    ~ThreadCount() { omp_set_num_threads(saved); }
};

} // namespace

TEST_CASE("parallel kernels agree with the serial reference") {
    const auto x = sample(Distribution::student_t(3.0, 1.0), 100003, 17);
    const auto y = sample(Distribution::normal(1.0), 100003, 18);
    const auto cb = build_absmax_codebook(Distribution::normal(1.0), 16, 64, Variant::Symmetric);
    for (int threads : {1, 3, 4}) {
        ThreadCount tc(threads);
        CHECK(kernels::encode(cb, x) == kernels::serial::encode(cb, x));
        for (NormKind k : {NormKind::RMS, NormKind::Absmax, NormKind::Signmax}) {
            const auto a = kernels::group_norms(k, x, 64);
            const auto b = kernels::serial::group_norms(k, x, 64);
            REQUIRE(a.size() == b.size());
            for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
        }
        std::vector<float> scales(kernels::group_norms(NormKind::Absmax, x, 64).size());
        const auto norms = kernels::group_norms(NormKind::Absmax, x, 64);
        for (std::size_t i = 0; i < scales.size(); ++i) scales[i] = static_cast<float>(norms[i]);
        scales[3] = 0.0f;
        std::vector<Code> c1(x.size()), c2(x.size());
        kernels::encode_groups(cb, x, 64, scales, 1.0, c1);
        kernels::serial::encode_groups(cb, x, 64, scales, 1.0, c2);
        CHECK(c1 == c2);
        std::vector<float> d1(x.size()), d2(x.size());
        kernels::decode_groups(cb, c1, 64, scales, 1.25, d1);
        kernels::serial::decode_groups(cb, c1, 64, scales, 1.25, d2);
        CHECK(d1 == d2);

        CHECK(kernels::sum_squares(x) == doctest::Approx(kernels::serial::sum_squares(x)).epsilon(1e-12));
        CHECK(kernels::squared_error(x, y) == doctest::Approx(kernels::serial::squared_error(x, y)).epsilon(1e-12));
        CHECK(kernels::weighted_squared_error(x, y, y) ==
              doctest::Approx(kernels::serial::weighted_squared_error(x, y, y)).epsilon(1e-12));
    }
}

TEST_CASE("reductions are bitwise independent of the thread count") {
    const auto x = sample(Distribution::laplace(1.0), 300000, 2);
    double ref = 0.0;
    {
        ThreadCount tc(1);
        ref = kernels::sum_squares(x);
    }
    for (int threads : {2, 5, 8}) {
        ThreadCount tc(threads);
        CHECK(kernels::sum_squares(x) == ref);
    }
}

TEST_CASE("sampling is independent of the thread count") {
    std::vector<float> ref;
    {
        ThreadCount tc(1);
        ref = sample(Distribution::student_t(5.0, 1.0), 50000, 99);
    }
    ThreadCount tc(4);
    CHECK(sample(Distribution::student_t(5.0, 1.0), 50000, 99) == ref);
}

TEST_CASE("half-precision conversion") {
    CHECK(half_to_float(float_to_half(1.0f)) == 1.0f);
    CHECK(half_to_float(float_to_half(-2.5f)) == -2.5f);
    CHECK(float_to_half(65504.0f) == 0x7bff);
    CHECK(float_to_half(1e9f) == 0x7bff);
    CHECK(half_to_float(float_to_half(std::ldexp(1.0f, -24))) == std::ldexp(1.0f, -24));
    CHECK(float_to_half(std::ldexp(1.0f, -26)) == 0);
    // ties to even: 1 + 2^-11 is halfway between 1 and 1 + 2^-10
    CHECK(half_to_float(float_to_half(1.0f + std::ldexp(1.0f, -11))) == 1.0f);
    CHECK(half_to_float(float_to_half(1.0f + 3 * std::ldexp(1.0f, -11))) == 1.0f + std::ldexp(1.0f, -9));
    for (uint32_t h = 0; h < 0x7c00; ++h) {
        CHECK(float_to_half(half_to_float(static_cast<uint16_t>(h))) == h);
        CHECK(float_to_half(half_to_float(static_cast<uint16_t>(h | 0x8000))) == (h | 0x8000));
    }
}

TEST_CASE("outlier split, restore and serialisation") {
    std::vector<float> x(1000);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(std::sin(0.1 * i));
    x[10] = 9.0f;
    x[500] = -9.0f;
    x[999] = 8.0f;
    const auto split = split_outliers(x, 0.003);
    REQUIRE(split.outliers.size() == 3);
    CHECK(split.outliers.entries[0].position == 10);
    CHECK(split.outliers.entries[1].position == 500);
    CHECK(split.outliers.entries[2].position == 999);
    CHECK(split.dense[500] == 0.0f);
    CHECK(restore_outliers(split.dense, split.outliers) == x);
    const auto bytes = serialise(split.outliers);
    CHECK(bytes.size() == 8 + 3 * 6);
    const auto back = deserialise_outliers(bytes, x.size());
    CHECK(back.entries == split.outliers.entries);
    CHECK_THROWS(deserialise_outliers(std::vector<uint8_t>(bytes.begin(), bytes.end() - 1), x.size()));
    CHECK_THROWS(deserialise_outliers(bytes, 999));
    // magnitude ties go to the lower position
    std::vector<float> ties{1, -3, 3, 2};
    const auto t = split_outliers(ties, 0.05);
    CHECK(t.outliers.size() == 0);
    std::vector<float> many(40, 1.0f);
    const auto m = split_outliers(many, 0.05);
    REQUIRE(m.outliers.size() == 2);
    CHECK(m.outliers.entries[0].position == 0);
    CHECK(m.outliers.entries[1].position == 1);
}
