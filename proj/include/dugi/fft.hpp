#pragma once

#include "dugi/tensor.hpp"

#include <memory>
#include <vector>

namespace dugi {

struct ComplexGrid {
    int height = 0, width = 0;
    std::vector<double> re, im;

    size_t size() const { return re.size(); }
    static ComplexGrid zeros(int h, int w);
};

// One-dimensional DFT plan: radix-2 for power-of-two sizes, Bluestein's
// chirp convolution otherwise. forward() computes the unnormalized DFT
// in place; inverses are built from it by conjugation.
class Fft1d {
public:
    explicit Fft1d(int n);
    int size() const { return n_; }
    void forward(double* re, double* im) const;

private:
    void forward_pow2(double* re, double* im) const;

    int n_;
    bool pow2_;
    std::vector<int> bitrev_;
    std::vector<double> tw_re_, tw_im_;   // e^(-2pi i k/n), k < n/2

    // Bluestein state: chirp w_k = e^(-i pi k^2 / n) and the size-m
    // spectrum of the wrapped conjugate chirp.
    int m_ = 0;
    std::shared_ptr<const Fft1d> sub_;
    std::vector<double> w_re_, w_im_;
    std::vector<double> bf_re_, bf_im_;
};

// Cached plan lookup, thread safe.
std::shared_ptr<const Fft1d> fft_plan(int n);

// Unnormalized forward DFT, DC at (0,0).
ComplexGrid fft2(const double* data, int h, int w);
ComplexGrid fft2(const Tensor& img);
ComplexGrid fft2_complex(const ComplexGrid& g);

// Inverse with 1/(h*w) normalization.
ComplexGrid ifft2(const ComplexGrid& spec);

// Inverse of a spectrum expected to be conjugate-symmetric; asserts the
// imaginary residue is negligible (max|im| <= 1e-6 * max|re|) and
// returns the real part. A failure signals a non-symmetric filter.
Tensor ifft2_real(const ComplexGrid& spec);

// Quadrant swap moving DC from (0,0) to (floor(h/2), floor(w/2)), and
// its exact inverse (they differ for odd sizes).
ComplexGrid center_shift(const ComplexGrid& g);
ComplexGrid center_unshift(const ComplexGrid& g);

} // namespace dugi
