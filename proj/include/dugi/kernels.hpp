#pragma once

#include <cstddef>
#include <cstdint>

// Hot loops, each in two forms: a plain serial reference and an OpenMP
// version parallelised over independent outputs. Per-element accumulation
// order is identical in both, so results match bitwise for any thread
// count. Tests assert that; the bench target times the pairs against
// each other.
namespace dugi::kernels {

// Global switch consulted by the parallel entry points. When off they
// fall through to the serial reference. On by default.
bool parallel_enabled();
void set_parallel(bool on);
int max_threads();

// c[m,n] = a[m,k] * b[k,n]
void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul(const double* a, const double* b, double* c, int m, int k, int n);

// c[m,n] = a[m,k] * b[n,k]^T
void matmul_nt_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);

// c[k,n] = a[m,k]^T * b[m,n]
void matmul_tn_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);

void add_serial(const double* a, const double* b, double* c, size_t n);
void add(const double* a, const double* b, double* c, size_t n);

void sub_serial(const double* a, const double* b, double* c, size_t n);
void sub(const double* a, const double* b, double* c, size_t n);

void mul_serial(const double* a, const double* b, double* c, size_t n);
void mul(const double* a, const double* b, double* c, size_t n);

void scale_serial(const double* a, double s, double* c, size_t n);
void scale(const double* a, double s, double* c, size_t n);

// c += s * a
void axpy_serial(double s, const double* a, double* c, size_t n);
void axpy(double s, const double* a, double* c, size_t n);

// Sum with a fixed blocked reduction order: per-block partials taken
// left to right, then combined left to right. Both versions use the
// same order, so the result is independent of threading.
double sum_serial(const double* a, size_t n);
double sum(const double* a, size_t n);

} // namespace dugi::kernels
