#include "dugi/frequency.hpp"

#include "dugi/common.hpp"

#include <cmath>

namespace dugi {

FilterVariant filter_variant_from_string(const std::string& s) {
    if (s == "literal") return FilterVariant::literal;
    if (s == "notch") return FilterVariant::notch;
    throw PreconditionError("unknown filter variant '" + s + "' (want literal or notch)");
}

std::string to_string(FilterVariant v) {
    return v == FilterVariant::literal ? "literal" : "notch";
}

namespace {
constexpr double kAlphaMargin = 1e-6;
constexpr double kPosFloor = 1e-300;

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}
} // namespace

double squash_alpha(double raw) { return sigmoid(raw) * (1.0 - kAlphaMargin); }

double softplus_pos(double raw) {
    double v;
    if (raw > 30.0) {
        v = raw;
    } else if (raw < -30.0) {
        v = std::exp(raw);
    } else {
        v = std::log1p(std::exp(raw));
    }
    return std::max(v, kPosFloor);
}

double inv_squash_alpha(double alpha) {
    const double s = alpha / (1.0 - kAlphaMargin);
    if (s <= 0.0 || s >= 1.0) throw PreconditionError("inv_squash_alpha: alpha out of range");
    return std::log(s / (1.0 - s));
}

double inv_softplus_pos(double v) {
    if (v <= 0.0) throw PreconditionError("inv_softplus_pos: value must be positive");
    if (v > 30.0) return v;
    return std::log(std::expm1(v));
}

RadialFilterParams RadialFilterParams::init(int h, int w) {
    if (h < 1 || w < 1) throw PreconditionError("filter init: dimensions must be positive");
    RadialFilterParams p;
    p.alpha_raw = Tensor::scalar(inv_squash_alpha(0.5)).set_requires_grad(true);
    p.beta_raw = Tensor::scalar(inv_softplus_pos(1.0)).set_requires_grad(true);
    p.r_raw = Tensor::scalar(inv_softplus_pos(std::min(h, w) / 8.0)).set_requires_grad(true);
    return p;
}

FilterSpec RadialFilterParams::spec(FilterVariant variant) const {
    FilterSpec s;
    s.alpha = squash_alpha(alpha_raw.item());
    s.beta = softplus_pos(beta_raw.item());
    s.radius = softplus_pos(r_raw.item());
    s.variant = variant;
    return s;
}

double radial_distance(int u, int v, int h, int w) {
    const double du = u - h / 2;
    const double dv = v - w / 2;
    return std::sqrt(du * du + dv * dv);
}

FilterField build_filter(const FilterSpec& spec, int h, int w) {
    if (h < 1 || w < 1) throw PreconditionError("build_filter: dimensions must be positive");
    FilterField f;
    f.height = h;
    f.width = w;
    f.variant = spec.variant;
    f.values.resize(static_cast<size_t>(h) * w);
    const double inv_r2 = 1.0 / (spec.radius * spec.radius);
    for (int u = 0; u < h; ++u) {
        for (int v = 0; v < w; ++v) {
            const double d = radial_distance(u, v, h, w);
            const double e = std::exp(-spec.beta * d * d * inv_r2);
            f.values[static_cast<size_t>(u) * w + v] =
                spec.variant == FilterVariant::literal ? spec.alpha * e
                                                       : 1.0 - (1.0 - spec.alpha) * e;
        }
    }
    return f;
}

namespace {
// Shared forward: filter the unshifted spectrum by the centered field.
ComplexGrid filter_spectrum(const ComplexGrid& spec, const FilterField& f) {
    ComplexGrid out = spec;
    for (int u = 0; u < spec.height; ++u) {
        for (int v = 0; v < spec.width; ++v) {
            const double hval = f.at_unshifted(u, v);
            out.re[static_cast<size_t>(u) * spec.width + v] *= hval;
            out.im[static_cast<size_t>(u) * spec.width + v] *= hval;
        }
    }
    return out;
}
} // namespace

Tensor afdm_apply(const Tensor& img, const FilterSpec& spec) {
    if (img.ndim() != 2) throw ShapeError("afdm: expected 2-D image, got " + shape_str(img.shape()));
    const int h = img.shape()[0], w = img.shape()[1];
    const FilterField f = build_filter(spec, h, w);
    return ifft2_real(filter_spectrum(fft2(img), f));
}

Tensor afdm(const Tensor& img, const RadialFilterParams& params, FilterVariant variant) {
    if (img.ndim() != 2) throw ShapeError("afdm: expected 2-D image, got " + shape_str(img.shape()));
    const int h = img.shape()[0], w = img.shape()[1];
    const FilterSpec spec = params.spec(variant);
    const FilterField field = build_filter(spec, h, w);

    auto xhat = std::make_shared<ComplexGrid>(fft2(img));
    Tensor out = ifft2_real(filter_spectrum(*xhat, field));

    const bool need = Tape::active() &&
                      (img.requires_grad() || params.alpha_raw.requires_grad() ||
                       params.beta_raw.requires_grad() || params.r_raw.requires_grad());
    if (!need) return out;

    out.set_requires_grad(true);
    auto in_n = img.node_ptr();
    auto a_n = params.alpha_raw.node_ptr();
    auto b_n = params.beta_raw.node_ptr();
    auto r_n = params.r_raw.node_ptr();
    auto out_n = out.node_ptr();

    // Saved raw values for the squash/softplus chain rules.
    const double a_raw = params.alpha_raw.item();
    const double b_raw = params.beta_raw.item();
    const double r_raw = params.r_raw.item();

    Tape::active()->record(
        {img, params.alpha_raw, params.beta_raw, params.r_raw}, out,
        [in_n, a_n, b_n, r_n, out_n, xhat, field, spec, variant, a_raw, b_raw, r_raw, h, w]() {
            ComplexGrid g = ComplexGrid::zeros(h, w);
            g.re = out_n->grad;

            // The filter operator is linear with a symmetric real
            // kernel, so its adjoint is itself: the image gradient is
            // the same filtering applied to the output gradient.
            if (in_n->requires_grad) {
                ComplexGrid gs = filter_spectrum(fft2_complex(g), field);
                ComplexGrid gx = ifft2(gs);
                for (size_t i = 0; i < gx.size(); ++i) in_n->grad[i] += gx.re[i];
            }

            const bool want_params =
                a_n->requires_grad || b_n->requires_grad || r_n->requires_grad;
            if (!want_params) return;

            // dL/dH(k) = Re( fft2(x)(k) * ifft2(g)(k) ), then chain
            // through the radial formula to alpha, beta, r.
            const ComplexGrid ig = ifft2(g);

            const double alpha = spec.alpha, beta = spec.beta, r = spec.radius;
            const double inv_r2 = 1.0 / (r * r);
            double d_alpha = 0.0, d_beta = 0.0, d_r = 0.0;
            for (int u = 0; u < h; ++u) {
                for (int v = 0; v < w; ++v) {
                    const size_t k = static_cast<size_t>(u) * w + v;
                    const double gH = xhat->re[k] * ig.re[k] - xhat->im[k] * ig.im[k];
                    // Centered-field derivative at this unshifted coordinate.
                    const int cu = (u + h / 2) % h;
                    const int cv = (v + w / 2) % w;
                    const double d = radial_distance(cu, cv, h, w);
                    const double q = d * d * inv_r2;
                    const double e = std::exp(-beta * q);
                    if (variant == FilterVariant::literal) {
                        d_alpha += gH * e;
                        d_beta += gH * (-alpha * e * q);
                        d_r += gH * (alpha * e * beta * 2.0 * d * d / (r * r * r));
                    } else {
                        d_alpha += gH * e;
                        d_beta += gH * ((1.0 - alpha) * e * q);
                        d_r += gH * (-(1.0 - alpha) * e * beta * 2.0 * d * d / (r * r * r));
                    }
                }
            }
            const double sa = sigmoid(a_raw);
            if (a_n->requires_grad) a_n->grad[0] += d_alpha * sa * (1.0 - sa) * (1.0 - kAlphaMargin);
            if (b_n->requires_grad) b_n->grad[0] += d_beta * sigmoid(b_raw);
            if (r_n->requires_grad) r_n->grad[0] += d_r * sigmoid(r_raw);
        });
    return out;
}

} // namespace dugi
