// Serial reference vs OpenMP kernels: median wall time and agreement check.
// Reductions agree to rounding (chunked vs sequential sums); the rest exactly.

#include "qlab/codebook.hpp"
#include "qlab/distributions.hpp"
#include "qlab/kernels.hpp"
#include "qlab/scaling.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

using namespace qlab;

namespace {

double median_ms(int reps, const std::function<void()> & f) {
    std::vector<double> t;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::nth_element(t.begin(), t.begin() + reps / 2, t.end());
    return t[reps / 2];
}

template <class T>
volatile T sink;

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"qlab kernel benchmark"};
    std::size_t n = std::size_t{1} << 24;
    int reps = 5;
    app.add_option("-n,--elements", n, "elements per kernel call")->check(CLI::PositiveNumber);
    app.add_option("-r,--reps", reps, "repetitions (median reported)")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);
    kernels::configure_threads_from_env();

    const auto x = sample(Distribution::normal(1.0), n, 1);
    const auto y = sample(Distribution::normal(1.0), n, 2);
    const auto cb = build_power_alpha_codebook(Distribution::normal(1.0), 16, 1.0 / 3.0, Variant::Symmetric);
    const std::size_t group = 128;
    const auto norms = kernels::serial::group_norms(NormKind::Absmax, x, group);
    const std::vector<float> scales(norms.begin(), norms.end());
    std::vector<Code> codes(n);
    std::vector<float> out(n);

    struct Case {
        const char * name;
        std::function<void()> serial, parallel;
        std::function<bool()> agree;
    };
    std::vector<Code> cs, cp;
    std::vector<double> ns, np;
    double ds = 0, dp = 0;
    std::vector<int64_t> gs, gp;
    const std::vector<Case> cases{
        {"encode", [&] { cs = kernels::serial::encode(cb, x); }, [&] { cp = kernels::encode(cb, x); },
         [&] { return cs == cp; }},
        {"group_norms", [&] { ns = kernels::serial::group_norms(NormKind::RMS, x, group); },
         [&] { np = kernels::group_norms(NormKind::RMS, x, group); }, [&] {
             for (std::size_t i = 0; i < ns.size(); ++i)
                 if (std::fabs(ns[i] - np[i]) > 1e-12 * ns[i]) return false;
             return ns.size() == np.size();
         }},
        {"encode_groups", [&] { kernels::serial::encode_groups(cb, x, group, scales, 1.0, codes); },
         [&] { kernels::encode_groups(cb, x, group, scales, 1.0, codes); }, [] { return true; }},
        {"decode_groups", [&] { kernels::serial::decode_groups(cb, codes, group, scales, 1.0, out); },
         [&] { kernels::decode_groups(cb, codes, group, scales, 1.0, out); }, [] { return true; }},
        {"squared_error", [&] { ds = kernels::serial::squared_error(x, y); },
         [&] { dp = kernels::squared_error(x, y); }, [&] { return std::fabs(ds - dp) <= 1e-12 * ds; }},
        {"grid_quantise", [&] { gs = kernels::serial::grid_quantise(x, 0.05); },
         [&] { gp = kernels::grid_quantise(x, 0.05); }, [&] { return gs == gp; }},
    };

    std::printf("elements=%zu threads=%d reps=%d\n", n, omp_get_max_threads(), reps);
    std::printf("%-14s %12s %12s %8s %6s\n", "kernel", "serial_ms", "parallel_ms", "speedup", "agree");
    bool ok = true;
    for (const auto & c : cases) {
        const double s = median_ms(reps, c.serial);
        const double p = median_ms(reps, c.parallel);
        const bool agree = c.agree();
        ok = ok && agree;
        std::printf("%-14s %12.3f %12.3f %8.2f %6s\n", c.name, s, p, s / p, agree ? "yes" : "NO");
    }
    sink<std::size_t> = codes.size() + out.size();
    return ok ? 0 : 1;
}
