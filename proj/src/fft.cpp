#include "dugi/fft.hpp"

#include "dugi/common.hpp"
#include "dugi/kernels.hpp"

#include <cmath>
#include <map>
#include <mutex>

namespace dugi {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

int next_pow2(int n) {
    int m = 1;
    while (m < n) m <<= 1;
    return m;
}

std::mutex g_plan_mutex;
std::map<int, std::shared_ptr<const Fft1d>> g_plans;

} // namespace

ComplexGrid ComplexGrid::zeros(int h, int w) {
    ComplexGrid g;
    g.height = h;
    g.width = w;
    g.re.assign(static_cast<size_t>(h) * w, 0.0);
    g.im.assign(static_cast<size_t>(h) * w, 0.0);
    return g;
}

Fft1d::Fft1d(int n) : n_(n), pow2_(is_pow2(n)) {
    if (n <= 0) throw PreconditionError("fft: size must be positive");
    if (pow2_) {
        bitrev_.resize(static_cast<size_t>(n));
        int bits = 0;
        while ((1 << bits) < n) ++bits;
        for (int i = 0; i < n; ++i) {
            int r = 0;
            for (int b = 0; b < bits; ++b) {
                if (i & (1 << b)) r |= 1 << (bits - 1 - b);
            }
            bitrev_[static_cast<size_t>(i)] = r;
        }
        tw_re_.resize(static_cast<size_t>(n / 2 > 0 ? n / 2 : 1));
        tw_im_.resize(tw_re_.size());
        for (size_t k = 0; k < tw_re_.size(); ++k) {
            const double a = -2.0 * kPi * static_cast<double>(k) / n;
            tw_re_[k] = std::cos(a);
            tw_im_[k] = std::sin(a);
        }
        return;
    }
    // Bluestein: X_j = w_j * sum_k (x_k w_k) conj(w)_{j-k}, a linear
    // convolution done with a power-of-two FFT. The chirp phase uses
    // k^2 mod 2n to keep the angle small and exact.
    m_ = next_pow2(2 * n - 1);
    sub_ = std::make_shared<const Fft1d>(m_);
    w_re_.resize(static_cast<size_t>(n));
    w_im_.resize(static_cast<size_t>(n));
    const long long two_n = 2LL * n;
    for (int k = 0; k < n; ++k) {
        const long long q = (static_cast<long long>(k) * k) % two_n;
        const double a = -kPi * static_cast<double>(q) / n;
        w_re_[static_cast<size_t>(k)] = std::cos(a);
        w_im_[static_cast<size_t>(k)] = std::sin(a);
    }
    bf_re_.assign(static_cast<size_t>(m_), 0.0);
    bf_im_.assign(static_cast<size_t>(m_), 0.0);
    for (int k = 0; k < n; ++k) {
        const double br = w_re_[static_cast<size_t>(k)];
        const double bi = -w_im_[static_cast<size_t>(k)];
        bf_re_[static_cast<size_t>(k)] = br;
        bf_im_[static_cast<size_t>(k)] = bi;
        if (k > 0) {
            bf_re_[static_cast<size_t>(m_ - k)] = br;
            bf_im_[static_cast<size_t>(m_ - k)] = bi;
        }
    }
    sub_->forward(bf_re_.data(), bf_im_.data());
}

void Fft1d::forward_pow2(double* re, double* im) const {
    for (int i = 0; i < n_; ++i) {
        const int j = bitrev_[static_cast<size_t>(i)];
        if (j > i) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (int len = 2; len <= n_; len <<= 1) {
        const int half = len >> 1;
        const int step = n_ / len;
        for (int blk = 0; blk < n_; blk += len) {
            for (int k = 0; k < half; ++k) {
                const double wr = tw_re_[static_cast<size_t>(k * step)];
                const double wi = tw_im_[static_cast<size_t>(k * step)];
                const int a = blk + k, b = a + half;
                const double xr = re[b] * wr - im[b] * wi;
                const double xi = re[b] * wi + im[b] * wr;
                re[b] = re[a] - xr;
                im[b] = im[a] - xi;
                re[a] += xr;
                im[a] += xi;
            }
        }
    }
}

void Fft1d::forward(double* re, double* im) const {
    if (n_ == 1) return;
    if (pow2_) {
        forward_pow2(re, im);
        return;
    }
    std::vector<double> ar(static_cast<size_t>(m_), 0.0), ai(static_cast<size_t>(m_), 0.0);
    for (int k = 0; k < n_; ++k) {
        const double wr = w_re_[static_cast<size_t>(k)], wi = w_im_[static_cast<size_t>(k)];
        ar[static_cast<size_t>(k)] = re[k] * wr - im[k] * wi;
        ai[static_cast<size_t>(k)] = re[k] * wi + im[k] * wr;
    }
    sub_->forward(ar.data(), ai.data());
    for (int k = 0; k < m_; ++k) {
        const double r = ar[static_cast<size_t>(k)] * bf_re_[static_cast<size_t>(k)] -
                         ai[static_cast<size_t>(k)] * bf_im_[static_cast<size_t>(k)];
        const double i = ar[static_cast<size_t>(k)] * bf_im_[static_cast<size_t>(k)] +
                         ai[static_cast<size_t>(k)] * bf_re_[static_cast<size_t>(k)];
        ar[static_cast<size_t>(k)] = r;
        ai[static_cast<size_t>(k)] = i;
    }
    // Inverse size-m FFT by conjugation.
    for (int k = 0; k < m_; ++k) ai[static_cast<size_t>(k)] = -ai[static_cast<size_t>(k)];
    sub_->forward(ar.data(), ai.data());
    const double inv_m = 1.0 / m_;
    for (int j = 0; j < n_; ++j) {
        const double cr = ar[static_cast<size_t>(j)] * inv_m;
        const double ci = -ai[static_cast<size_t>(j)] * inv_m;
        const double wr = w_re_[static_cast<size_t>(j)], wi = w_im_[static_cast<size_t>(j)];
        re[j] = cr * wr - ci * wi;
        im[j] = cr * wi + ci * wr;
    }
}

std::shared_ptr<const Fft1d> fft_plan(int n) {
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    auto it = g_plans.find(n);
    if (it != g_plans.end()) return it->second;
    auto p = std::make_shared<const Fft1d>(n);
    g_plans[n] = p;
    return p;
}

ComplexGrid fft2_complex(const ComplexGrid& g) {
    const int h = g.height, w = g.width;
    ComplexGrid out = g;
    const auto row_plan = fft_plan(w);
    const auto col_plan = fft_plan(h);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (kernels::parallel_enabled() && h > 1)
#endif
    for (int r = 0; r < h; ++r) {
        row_plan->forward(out.re.data() + static_cast<size_t>(r) * w,
                          out.im.data() + static_cast<size_t>(r) * w);
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (kernels::parallel_enabled() && w > 1)
#endif
    for (int c = 0; c < w; ++c) {
        std::vector<double> cr(static_cast<size_t>(h)), ci(static_cast<size_t>(h));
        for (int r = 0; r < h; ++r) {
            cr[static_cast<size_t>(r)] = out.re[static_cast<size_t>(r) * w + c];
            ci[static_cast<size_t>(r)] = out.im[static_cast<size_t>(r) * w + c];
        }
        col_plan->forward(cr.data(), ci.data());
        for (int r = 0; r < h; ++r) {
            out.re[static_cast<size_t>(r) * w + c] = cr[static_cast<size_t>(r)];
            out.im[static_cast<size_t>(r) * w + c] = ci[static_cast<size_t>(r)];
        }
    }
    return out;
}

ComplexGrid fft2(const double* data, int h, int w) {
    if (h < 1 || w < 1) throw PreconditionError("fft2: dimensions must be positive");
    ComplexGrid g = ComplexGrid::zeros(h, w);
    g.re.assign(data, data + static_cast<size_t>(h) * w);
    return fft2_complex(g);
}

ComplexGrid fft2(const Tensor& img) {
    if (img.ndim() != 2) throw ShapeError("fft2: expected 2-D tensor, got " + shape_str(img.shape()));
    return fft2(img.data().data(), img.shape()[0], img.shape()[1]);
}

ComplexGrid ifft2(const ComplexGrid& spec) {
    ComplexGrid g = spec;
    for (double& v : g.im) v = -v;
    g = fft2_complex(g);
    const double inv = 1.0 / (static_cast<double>(spec.height) * spec.width);
    for (size_t i = 0; i < g.size(); ++i) {
        g.re[i] *= inv;
        g.im[i] *= -inv;
    }
    return g;
}

Tensor ifft2_real(const ComplexGrid& spec) {
    ComplexGrid g = ifft2(spec);
    double max_re = 0.0, max_im = 0.0;
    for (size_t i = 0; i < g.size(); ++i) {
        max_re = std::max(max_re, std::abs(g.re[i]));
        max_im = std::max(max_im, std::abs(g.im[i]));
    }
    if (max_im > 1e-6 * max_re + 1e-12) {
        throw FilterSymmetryError("ifft2_real: imaginary residue " + std::to_string(max_im) +
                                  " exceeds 1e-6 of max real " + std::to_string(max_re) +
                                  "; spectrum is not conjugate-symmetric");
    }
    return Tensor::from_data({g.height, g.width}, std::move(g.re));
}

namespace {
ComplexGrid shift_by(const ComplexGrid& g, int dr, int dc) {
    ComplexGrid out = ComplexGrid::zeros(g.height, g.width);
    for (int r = 0; r < g.height; ++r) {
        const int rr = (r + dr) % g.height;
        for (int c = 0; c < g.width; ++c) {
            const int cc = (c + dc) % g.width;
            out.re[static_cast<size_t>(rr) * g.width + cc] = g.re[static_cast<size_t>(r) * g.width + c];
            out.im[static_cast<size_t>(rr) * g.width + cc] = g.im[static_cast<size_t>(r) * g.width + c];
        }
    }
    return out;
}
} // namespace

ComplexGrid center_shift(const ComplexGrid& g) {
    return shift_by(g, g.height / 2, g.width / 2);
}

ComplexGrid center_unshift(const ComplexGrid& g) {
    return shift_by(g, g.height - g.height / 2, g.width - g.width / 2);
}

} // namespace dugi
