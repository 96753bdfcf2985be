#pragma once

// Reference computations for the tests. Everything here is written the
// slow, obvious way (quadratic DFTs, per-element loops, std::map
// histograms) so it shares no code or algorithmic shortcuts with the
// library being checked.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

namespace oracle {

constexpr double kPi = 3.14159265358979323846;

// Direct-sum 2D DFT. Forward is unnormalized; the inverse divides by
// h*w, matching the library convention.
inline void dft2(const std::vector<double>& re_in, const std::vector<double>& im_in, int h, int w,
                 bool inverse, std::vector<double>& re_out, std::vector<double>& im_out) {
    re_out.assign(static_cast<size_t>(h) * w, 0.0);
    im_out.assign(static_cast<size_t>(h) * w, 0.0);
    const double sign = inverse ? 2.0 * kPi : -2.0 * kPi;
    for (int u = 0; u < h; ++u) {
        for (int v = 0; v < w; ++v) {
            std::complex<double> acc(0.0, 0.0);
            for (int r = 0; r < h; ++r) {
                for (int c = 0; c < w; ++c) {
                    const double ang = sign * (static_cast<double>(u) * r / h +
                                               static_cast<double>(v) * c / w);
                    const std::complex<double> x(re_in[static_cast<size_t>(r) * w + c],
                                                 im_in[static_cast<size_t>(r) * w + c]);
                    acc += x * std::polar(1.0, ang);
                }
            }
            if (inverse) acc /= static_cast<double>(h) * w;
            re_out[static_cast<size_t>(u) * w + v] = acc.real();
            im_out[static_cast<size_t>(u) * w + v] = acc.imag();
        }
    }
}

// Plain triple-loop matrix product.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  int m, int k, int n) {
    std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l) {
                acc += a[static_cast<size_t>(i) * k + l] * b[static_cast<size_t>(l) * n + j];
            }
            c[static_cast<size_t>(i) * n + j] = acc;
        }
    }
    return c;
}

// Histogram Shannon entropy in bits over exact values.
inline double hist_entropy(const std::vector<double>& values) {
    std::map<double, long long> counts;
    for (double v : values) ++counts[v];
    const double n = static_cast<double>(values.size());
    double acc = 0.0;
    for (const auto& [value, count] : counts) {
        (void)value;
        const double p = count / n;
        acc -= p * std::log2(p);
    }
    return acc;
}

// Brute-force top-k retention: order every token by (score, index)
// and keep the keep_count largest. Returns ascending kept indices.
inline std::vector<int> topk_keep(const std::vector<double>& scores, int keep_count) {
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)]) {
            return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
        }
        return a > b;
    });
    idx.resize(static_cast<size_t>(keep_count));
    std::sort(idx.begin(), idx.end());
    return idx;
}

// Term-by-term guided attention for a single head:
// out_i = sum_j softmax_j(q_i . (ks_j + kf_j) / sqrt(d)) * (vs_j + vf_j).
inline std::vector<double> guided_attention(const std::vector<double>& q,
                                            const std::vector<double>& ks,
                                            const std::vector<double>& kf,
                                            const std::vector<double>& vs,
                                            const std::vector<double>& vf, int n, int d) {
    std::vector<double> out(static_cast<size_t>(n) * d, 0.0);
    for (int i = 0; i < n; ++i) {
        std::vector<double> s(static_cast<size_t>(n), 0.0);
        for (int j = 0; j < n; ++j) {
            double dot = 0.0;
            for (int e = 0; e < d; ++e) {
                dot += q[static_cast<size_t>(i) * d + e] *
                       (ks[static_cast<size_t>(j) * d + e] + kf[static_cast<size_t>(j) * d + e]);
            }
            s[static_cast<size_t>(j)] = dot / std::sqrt(static_cast<double>(d));
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double z = 0.0;
        for (double& x : s) {
            x = std::exp(x - mx);
            z += x;
        }
        for (int j = 0; j < n; ++j) {
            const double p = s[static_cast<size_t>(j)] / z;
            for (int e = 0; e < d; ++e) {
                out[static_cast<size_t>(i) * d + e] +=
                    p * (vs[static_cast<size_t>(j) * d + e] + vf[static_cast<size_t>(j) * d + e]);
            }
        }
    }
    return out;
}

// Radial filter gain for an unshifted spectrum index, recomputed from
// scratch: frequency coordinates wrap to [-floor(n/2), ...), distance
// is Euclidean from DC.
inline double filter_gain(int u, int v, int h, int w, double alpha, double beta, double r,
                          bool notch) {
    const int fu = (u + h / 2) % h - h / 2;
    const int fv = (v + w / 2) % w - w / 2;
    const double d2 = static_cast<double>(fu) * fu + static_cast<double>(fv) * fv;
    const double e = std::exp(-beta * d2 / (r * r));
    return notch ? 1.0 - (1.0 - alpha) * e : alpha * e;
}

// Full naive pipeline: DFT, per-coefficient radial gain, inverse DFT.
inline std::vector<double> filtered_image(const std::vector<double>& img, int h, int w,
                                          double alpha, double beta, double r, bool notch) {
    std::vector<double> zero(img.size(), 0.0), fre, fim;
    dft2(img, zero, h, w, false, fre, fim);
    for (int u = 0; u < h; ++u) {
        for (int v = 0; v < w; ++v) {
            const double g = filter_gain(u, v, h, w, alpha, beta, r, notch);
            fre[static_cast<size_t>(u) * w + v] *= g;
            fim[static_cast<size_t>(u) * w + v] *= g;
        }
    }
    std::vector<double> ore, oim;
    dft2(fre, fim, h, w, true, ore, oim);
    return ore;
}

// One AdamW step on a scalar, written straight from the published
// recurrences.
inline double adamw_scalar(double p, double g, double lr, double wd, double b1, double b2,
                           double eps, int t, double& m, double& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double mhat = m / (1.0 - std::pow(b1, t));
    const double vhat = v / (1.0 - std::pow(b2, t));
    return p - lr * wd * p - lr * mhat / (std::sqrt(vhat) + eps);
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, da = 0.0, db = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += a[i] * b[i];
        da += a[i] * a[i];
        db += b[i] * b[i];
    }
    return num / (std::sqrt(da) * std::sqrt(db));
}

} // namespace oracle
