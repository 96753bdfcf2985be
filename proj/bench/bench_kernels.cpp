// Times the OpenMP kernels against their serial reference forms and
// prints a speedup table. Also re-verifies the bitwise-equality
// contract on the benchmarked shapes, since a bench that drifts from
// the reference would be timing the wrong thing.

#include "dugi/kernels.hpp"
#include "dugi/masking.hpp"
#include "dugi/rng.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

using namespace dugi;

namespace {

double best_of(int reps, const std::function<void()>& fn) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        if (ms < best) best = ms;
    }
    return best;
}

int g_mismatches = 0;

void row(const std::string& name, const std::string& shape, int reps,
         const std::function<void()>& serial, const std::function<void()>& parallel,
         const std::function<bool()>& same) {
    serial();     // warm both paths and produce outputs for the equality check
    parallel();
    if (!same()) {
        std::printf("%-12s %-18s results DIVERGE from the serial reference\n", name.c_str(),
                    shape.c_str());
        ++g_mismatches;
        return;
    }
    const double s = best_of(reps, serial);
    const double p = best_of(reps, parallel);
    std::printf("%-12s %-18s serial %9.2f ms   parallel %9.2f ms   x%.2f\n", name.c_str(),
                shape.c_str(), s, p, s / p);
}

std::vector<double> random_vec(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, 1.0);
    return v;
}

bool bytes_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

} // namespace

int main() {
    std::printf("threads available: %d\n\n", kernels::max_threads());

    // matrix products at a transformer-ish block size
    {
        const int m = 384, k = 384, n = 384;
        const std::vector<double> a = random_vec(static_cast<size_t>(m) * k, 1);
        const std::vector<double> b = random_vec(static_cast<size_t>(k) * n, 2);
        std::vector<double> cs(static_cast<size_t>(m) * n), cp(cs.size());
        row("matmul", "384x384 * 384x384", 5,
            [&] { kernels::matmul_serial(a.data(), b.data(), cs.data(), m, k, n); },
            [&] { kernels::matmul(a.data(), b.data(), cp.data(), m, k, n); },
            [&] { return bytes_equal(cs, cp); });
        row("matmul_nt", "384x384 * (384x384)^T", 5,
            [&] { kernels::matmul_nt_serial(a.data(), b.data(), cs.data(), m, k, n); },
            [&] { kernels::matmul_nt(a.data(), b.data(), cp.data(), m, k, n); },
            [&] { return bytes_equal(cs, cp); });
        row("matmul_tn", "(384x384)^T * 384x384", 5,
            [&] { kernels::matmul_tn_serial(a.data(), b.data(), cs.data(), m, k, n); },
            [&] { kernels::matmul_tn(a.data(), b.data(), cp.data(), m, k, n); },
            [&] { return bytes_equal(cs, cp); });
    }

    // elementwise ops and the blocked reduction
    {
        const size_t n = size_t{1} << 23;
        const std::vector<double> a = random_vec(n, 3);
        const std::vector<double> b = random_vec(n, 4);
        std::vector<double> cs(n), cp(n);
        row("add", "8M doubles", 7,
            [&] { kernels::add_serial(a.data(), b.data(), cs.data(), n); },
            [&] { kernels::add(a.data(), b.data(), cp.data(), n); },
            [&] { return bytes_equal(cs, cp); });
        row("mul", "8M doubles", 7,
            [&] { kernels::mul_serial(a.data(), b.data(), cs.data(), n); },
            [&] { kernels::mul(a.data(), b.data(), cp.data(), n); },
            [&] { return bytes_equal(cs, cp); });

        double rs = 0.0, rp = 0.0;
        row("sum", "8M doubles", 7,
            [&] { rs = kernels::sum_serial(a.data(), n); },
            [&] { rp = kernels::sum(a.data(), n); },
            [&] { return std::memcmp(&rs, &rp, sizeof(double)) == 0; });
    }

    // per-token entropy over a large frame
    {
        Rng rng(5);
        GrayImage img = make_image(1024, 1024);
        for (uint8_t& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));
        const TokenGrid grid = grid_from_image(img, 16);
        std::vector<double> es, ep;
        row("entropy_map", "4096 16x16 tokens", 5,
            [&] { es = entropy_map_serial(grid); },
            [&] { ep = entropy_map(grid); },
            [&] { return bytes_equal(es, ep); });
    }

    if (g_mismatches > 0) {
        std::printf("\n%d kernel(s) diverged; timings above are not comparable\n", g_mismatches);
        return 1;
    }
    return 0;
}
