#include "dugi/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dugi::kernels {

namespace {
std::atomic<bool> g_parallel{true};
constexpr size_t kSumBlock = 1024;
} // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n) {
    std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double av = ai[l];
            const double* bl = b + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    if (!parallel_enabled()) {
        matmul_serial(a, b, c, m, k, n);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] = 0.0;
        for (int l = 0; l < k; ++l) {
            const double av = ai[l];
            const double* bl = b + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

void matmul_nt_serial(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += ai[l] * bj[l];
            ci[j] = acc;
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    if (!parallel_enabled()) {
        matmul_nt_serial(a, b, c, m, k, n);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += ai[l] * bj[l];
            ci[j] = acc;
        }
    }
}

void matmul_tn_serial(const double* a, const double* b, double* c, int m, int k, int n) {
    // c[i,j] = sum_l a[l,i] * b[l,j]; l ascending per output element.
    std::memset(c, 0, sizeof(double) * static_cast<size_t>(k) * n);
    for (int l = 0; l < m; ++l) {
        const double* al = a + static_cast<size_t>(l) * k;
        const double* bl = b + static_cast<size_t>(l) * n;
        for (int i = 0; i < k; ++i) {
            const double av = al[i];
            double* ci = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    if (!parallel_enabled()) {
        matmul_tn_serial(a, b, c, m, k, n);
        return;
    }
    // Parallel over output rows i; inner l loop keeps the same
    // accumulation order as the serial form.
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < k; ++i) {
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] = 0.0;
        for (int l = 0; l < m; ++l) {
            const double av = a[static_cast<size_t>(l) * k + i];
            const double* bl = b + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

#define DUGI_ELEMENTWISE(name, expr)                                              \
    void name##_serial(const double* a, const double* b, double* c, size_t n) {   \
        for (size_t i = 0; i < n; ++i) c[i] = (expr);                             \
    }                                                                             \
    void name(const double* a, const double* b, double* c, size_t n) {            \
        if (!parallel_enabled()) {                                                \
            name##_serial(a, b, c, n);                                            \
            return;                                                               \
        }                                                                         \
        DUGI_OMP_FOR                                                              \
        for (long long i = 0; i < static_cast<long long>(n); ++i) c[i] = (expr);  \
    }

#ifdef _OPENMP
#define DUGI_OMP_FOR _Pragma("omp parallel for schedule(static)")
#else
#define DUGI_OMP_FOR
#endif

DUGI_ELEMENTWISE(add, a[i] + b[i])
DUGI_ELEMENTWISE(sub, a[i] - b[i])
DUGI_ELEMENTWISE(mul, a[i] * b[i])

#undef DUGI_ELEMENTWISE

void scale_serial(const double* a, double s, double* c, size_t n) {
    for (size_t i = 0; i < n; ++i) c[i] = a[i] * s;
}

void scale(const double* a, double s, double* c, size_t n) {
    if (!parallel_enabled()) {
        scale_serial(a, s, c, n);
        return;
    }
    DUGI_OMP_FOR
    for (long long i = 0; i < static_cast<long long>(n); ++i) c[i] = a[i] * s;
}

void axpy_serial(double s, const double* a, double* c, size_t n) {
    for (size_t i = 0; i < n; ++i) c[i] += s * a[i];
}

void axpy(double s, const double* a, double* c, size_t n) {
    if (!parallel_enabled()) {
        axpy_serial(s, a, c, n);
        return;
    }
    DUGI_OMP_FOR
    for (long long i = 0; i < static_cast<long long>(n); ++i) c[i] += s * a[i];
}

namespace {
double sum_block(const double* a, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}
} // namespace

double sum_serial(const double* a, size_t n) {
    const size_t nblocks = (n + kSumBlock - 1) / kSumBlock;
    double total = 0.0;
    for (size_t b = 0; b < nblocks; ++b) {
        const size_t lo = b * kSumBlock;
        total += sum_block(a + lo, std::min(n - lo, kSumBlock));
    }
    return total;
}

double sum(const double* a, size_t n) {
    if (!parallel_enabled() || n < 4 * kSumBlock) return sum_serial(a, n);
    const size_t nblocks = (n + kSumBlock - 1) / kSumBlock;
    std::vector<double> partial(nblocks);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long b = 0; b < static_cast<long long>(nblocks); ++b) {
        const size_t lo = static_cast<size_t>(b) * kSumBlock;
        partial[b] = sum_block(a + lo, std::min(n - lo, kSumBlock));
    }
    double total = 0.0;
    for (size_t b = 0; b < nblocks; ++b) total += partial[b];
    return total;
}

} // namespace dugi::kernels
