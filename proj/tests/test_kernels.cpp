#include "dugi/kernels.hpp"
#include "dugi/rng.hpp"
#include "oracles.hpp"

#include <doctest.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstring>
#include <vector>

using namespace dugi;

namespace {
std::vector<double> random_vec(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

// RAII guard so a failed CHECK cannot leave the global switch off for
// later tests.
struct ParallelGuard {
    bool prev = kernels::parallel_enabled();
    ~ParallelGuard() { kernels::set_parallel(prev); }
};
} // namespace

TEST_CASE("matmul matches the triple-loop reference") {
    const int m = 17, k = 23, n = 9;
    const auto a = random_vec(static_cast<size_t>(m) * k, 1);
    const auto b = random_vec(static_cast<size_t>(k) * n, 2);
    std::vector<double> c(static_cast<size_t>(m) * n);
    kernels::matmul(a.data(), b.data(), c.data(), m, k, n);
    const auto ref = oracle::matmul(a, b, m, k, n);
    for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("matmul_nt and matmul_tn match transposed references") {
    const int m = 11, k = 7, n = 13;
    const auto a = random_vec(static_cast<size_t>(m) * k, 3);
    const auto bt = random_vec(static_cast<size_t>(n) * k, 4);   // b stored [n,k]
    std::vector<double> c(static_cast<size_t>(m) * n);
    kernels::matmul_nt(a.data(), bt.data(), c.data(), m, k, n);
    std::vector<double> b(static_cast<size_t>(k) * n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) {
            b[static_cast<size_t>(j) * n + i] = bt[static_cast<size_t>(i) * k + j];
        }
    }
    auto ref = oracle::matmul(a, b, m, k, n);
    for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    // c2[k,n] = a^T[k,m] * m-by-n
    const auto g = random_vec(static_cast<size_t>(m) * n, 5);
    std::vector<double> c2(static_cast<size_t>(k) * n);
    kernels::matmul_tn(a.data(), g.data(), c2.data(), m, k, n);
    std::vector<double> at(static_cast<size_t>(k) * m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < k; ++j) {
            at[static_cast<size_t>(j) * m + i] = a[static_cast<size_t>(i) * k + j];
        }
    }
    ref = oracle::matmul(at, g, k, m, n);
    for (size_t i = 0; i < c2.size(); ++i) CHECK(c2[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("parallel kernels match serial ones bitwise") {
    ParallelGuard guard;
    kernels::set_parallel(true);
    const int m = 61, k = 37, n = 53;
    const auto a = random_vec(static_cast<size_t>(m) * k, 10);
    const auto b = random_vec(static_cast<size_t>(k) * n, 11);
    const auto bt = random_vec(static_cast<size_t>(n) * k, 12);

    std::vector<double> cs(static_cast<size_t>(m) * n), cp(cs.size());
    kernels::matmul_serial(a.data(), b.data(), cs.data(), m, k, n);
    kernels::matmul(a.data(), b.data(), cp.data(), m, k, n);
    CHECK(std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(double)) == 0);

    kernels::matmul_nt_serial(a.data(), bt.data(), cs.data(), m, k, n);
    kernels::matmul_nt(a.data(), bt.data(), cp.data(), m, k, n);
    CHECK(std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(double)) == 0);

    const auto g = random_vec(static_cast<size_t>(m) * n, 13);
    std::vector<double> ts(static_cast<size_t>(k) * n), tp(ts.size());
    kernels::matmul_tn_serial(a.data(), g.data(), ts.data(), m, k, n);
    kernels::matmul_tn(a.data(), g.data(), tp.data(), m, k, n);
    CHECK(std::memcmp(ts.data(), tp.data(), ts.size() * sizeof(double)) == 0);

    const size_t big = 100000;
    const auto x = random_vec(big, 14);
    const auto y = random_vec(big, 15);
    std::vector<double> zs(big), zp(big);
    kernels::add_serial(x.data(), y.data(), zs.data(), big);
    kernels::add(x.data(), y.data(), zp.data(), big);
    CHECK(std::memcmp(zs.data(), zp.data(), big * sizeof(double)) == 0);
    kernels::mul_serial(x.data(), y.data(), zs.data(), big);
    kernels::mul(x.data(), y.data(), zp.data(), big);
    CHECK(std::memcmp(zs.data(), zp.data(), big * sizeof(double)) == 0);

    const double ss = kernels::sum_serial(x.data(), big);
    const double sp = kernels::sum(x.data(), big);
    CHECK(std::memcmp(&ss, &sp, sizeof(double)) == 0);
}

#ifdef _OPENMP
TEST_CASE("results are identical across thread counts") {
    ParallelGuard guard;
    kernels::set_parallel(true);
    const int m = 47, k = 31, n = 29;
    const auto a = random_vec(static_cast<size_t>(m) * k, 20);
    const auto b = random_vec(static_cast<size_t>(k) * n, 21);
    const auto x = random_vec(80000, 22);

    std::vector<double> ref(static_cast<size_t>(m) * n);
    kernels::matmul_serial(a.data(), b.data(), ref.data(), m, k, n);
    const double sum_ref = kernels::sum_serial(x.data(), x.size());

    const int prev = omp_get_max_threads();
    for (int threads : {1, 2, 3, 4}) {
        omp_set_num_threads(threads);
        std::vector<double> c(ref.size());
        kernels::matmul(a.data(), b.data(), c.data(), m, k, n);
        CHECK(std::memcmp(ref.data(), c.data(), ref.size() * sizeof(double)) == 0);
        const double s = kernels::sum(x.data(), x.size());
        CHECK(std::memcmp(&sum_ref, &s, sizeof(double)) == 0);
    }
    omp_set_num_threads(prev);
}
#endif

TEST_CASE("disabling the parallel switch falls back to serial paths") {
    ParallelGuard guard;
    kernels::set_parallel(false);
    CHECK_FALSE(kernels::parallel_enabled());
    const auto x = random_vec(5000, 30);
    const double a = kernels::sum(x.data(), x.size());
    const double b = kernels::sum_serial(x.data(), x.size());
    CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
    kernels::set_parallel(true);
    CHECK(kernels::parallel_enabled());
}

TEST_CASE("blocked sum is accurate on adversarial magnitudes") {
    std::vector<double> v(4096, 1e-8);
    v[0] = 1e8;
    const double s = kernels::sum(v.data(), v.size());
    CHECK(s == doctest::Approx(1e8 + 4095e-8).epsilon(1e-12));
}
