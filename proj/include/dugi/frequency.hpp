#pragma once

#include "dugi/fft.hpp"
#include "dugi/tensor.hpp"

#include <string>
#include <vector>

namespace dugi {

enum class FilterVariant { literal, notch };

FilterVariant filter_variant_from_string(const std::string& s);
std::string to_string(FilterVariant v);

// Mapped (constrained) filter parameters.
struct FilterSpec {
    double alpha = 0.5;    // [0, 1)
    double beta = 1.0;     // > 0
    double radius = 8.0;   // > 0
    FilterVariant variant = FilterVariant::notch;
};

// Parameter mappings. alpha squashes through a sigmoid scaled by
// (1 - 1e-6) to stay strictly below 1; beta and r pass through a
// softplus floored at a tiny positive value so no raw input can
// produce a nonpositive or non-finite mapped value.
double squash_alpha(double raw);
double softplus_pos(double raw);
double inv_squash_alpha(double alpha);
double inv_softplus_pos(double v);

// Learnable raw parameters, each a [1] tensor.
struct RadialFilterParams {
    Tensor alpha_raw, beta_raw, r_raw;

    // alpha = 0.5, beta = 1.0, r = min(h, w) / 8.
    static RadialFilterParams init(int h, int w);
    FilterSpec spec(FilterVariant variant) const;
};

// Distance to the spectral center (floor(h/2), floor(w/2)) on the
// center-shifted grid.
double radial_distance(int u, int v, int h, int w);

struct FilterField {
    int height = 0, width = 0;
    FilterVariant variant = FilterVariant::notch;
    std::vector<double> values;   // centered grid, row-major

    double at_centered(int u, int v) const {
        return values[static_cast<size_t>(u) * width + v];
    }
    // H for a coefficient of the unshifted spectrum.
    double at_unshifted(int u, int v) const {
        const int cu = (u + height / 2) % height;
        const int cv = (v + width / 2) % width;
        return values[static_cast<size_t>(cu) * width + cv];
    }
};

// literal: H = alpha * exp(-beta * (D/r)^2), a center-weighted gain;
// notch:   H = 1 - (1-alpha) * exp(-beta * (D/r)^2), center scaled to
// alpha with the periphery tending to 1.
FilterField build_filter(const FilterSpec& spec, int h, int w);

// fft -> radial filter on the centered spectrum -> inverse fft. Fixed
// parameters, no gradients.
Tensor afdm_apply(const Tensor& img, const FilterSpec& spec);

// Differentiable form: gradients flow to the image and to the raw
// parameters through the filter values.
Tensor afdm(const Tensor& img, const RadialFilterParams& params, FilterVariant variant);

} // namespace dugi
