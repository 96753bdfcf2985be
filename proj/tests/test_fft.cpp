#include "dugi/fft.hpp"

#include "dugi/rng.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <utility>
#include <vector>

using namespace dugi;

namespace {
ComplexGrid random_grid(int h, int w, uint64_t seed, bool complex_input) {
    Rng rng(seed);
    ComplexGrid g = ComplexGrid::zeros(h, w);
    for (size_t i = 0; i < g.size(); ++i) {
        g.re[i] = rng.uniform(-1.0, 1.0);
        if (complex_input) g.im[i] = rng.uniform(-1.0, 1.0);
    }
    return g;
}

double max_abs_diff(const ComplexGrid& got, const std::vector<double>& re,
                    const std::vector<double>& im) {
    double m = 0.0;
    for (size_t i = 0; i < got.size(); ++i) {
        m = std::max(m, std::abs(got.re[i] - re[i]));
        m = std::max(m, std::abs(got.im[i] - im[i]));
    }
    return m;
}
} // namespace

TEST_CASE("fft2 matches the direct DFT on mixed sizes") {
    for (auto [h, w] : {std::pair{7, 5}, {13, 7}, {16, 16}, {33, 31}, {8, 12}, {1, 9}}) {
        const ComplexGrid in = random_grid(h, w, 100 + static_cast<uint64_t>(h), true);
        const ComplexGrid out = fft2_complex(in);
        std::vector<double> re, im;
        oracle::dft2(in.re, in.im, h, w, false, re, im);
        INFO("size ", h, "x", w);
        CHECK(max_abs_diff(out, re, im) < 1e-8);
    }
}

TEST_CASE("ifft2 inverts fft2 to high accuracy") {
    for (auto [h, w] : {std::pair{7, 5}, {13, 7}, {16, 16}, {33, 31}}) {
        const ComplexGrid in = random_grid(h, w, 200 + static_cast<uint64_t>(w), true);
        const ComplexGrid back = ifft2(fft2_complex(in));
        double m = 0.0;
        for (size_t i = 0; i < in.size(); ++i) {
            m = std::max(m, std::abs(back.re[i] - in.re[i]));
            m = std::max(m, std::abs(back.im[i] - in.im[i]));
        }
        INFO("size ", h, "x", w);
        CHECK(m < 1e-9);
    }
}

TEST_CASE("Parseval: spectrum energy equals h*w times signal energy") {
    for (auto [h, w] : {std::pair{7, 5}, {13, 7}, {16, 16}, {33, 31}}) {
        const ComplexGrid in = random_grid(h, w, 300 + static_cast<uint64_t>(h * w), true);
        const ComplexGrid sp = fft2_complex(in);
        double es = 0.0, ef = 0.0;
        for (size_t i = 0; i < in.size(); ++i) {
            es += in.re[i] * in.re[i] + in.im[i] * in.im[i];
            ef += sp.re[i] * sp.re[i] + sp.im[i] * sp.im[i];
        }
        CHECK(std::abs(ef - es * h * w) / (es * h * w) < 1e-8);
    }
}

TEST_CASE("DFT basics: impulse, constant, linearity") {
    // Impulse at the origin transforms to an all-ones spectrum.
    ComplexGrid imp = ComplexGrid::zeros(6, 10);
    imp.re[0] = 1.0;
    const ComplexGrid spec = fft2_complex(imp);
    for (size_t i = 0; i < spec.size(); ++i) {
        CHECK(spec.re[i] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(std::abs(spec.im[i]) < 1e-12);
    }
    // Constant image concentrates everything in DC = h*w*c.
    std::vector<double> flat(35, 2.5);
    const ComplexGrid dc = fft2(flat.data(), 5, 7);
    CHECK(dc.re[0] == doctest::Approx(2.5 * 35));
    for (size_t i = 1; i < dc.size(); ++i) {
        CHECK(std::abs(dc.re[i]) < 1e-10);
        CHECK(std::abs(dc.im[i]) < 1e-10);
    }
    // Linearity.
    const ComplexGrid a = random_grid(9, 4, 7, true);
    ComplexGrid b = random_grid(9, 4, 8, true);
    ComplexGrid ab = ComplexGrid::zeros(9, 4);
    for (size_t i = 0; i < ab.size(); ++i) {
        ab.re[i] = a.re[i] + 2.0 * b.re[i];
        ab.im[i] = a.im[i] + 2.0 * b.im[i];
    }
    const ComplexGrid fa = fft2_complex(a), fb = fft2_complex(b), fab = fft2_complex(ab);
    for (size_t i = 0; i < fab.size(); ++i) {
        CHECK(fab.re[i] == doctest::Approx(fa.re[i] + 2.0 * fb.re[i]).epsilon(1e-10));
        CHECK(fab.im[i] == doctest::Approx(fa.im[i] + 2.0 * fb.im[i]).epsilon(1e-10));
    }
}

TEST_CASE("prime-size transforms go through the chirp path correctly") {
    for (int n : {2, 3, 5, 7, 11, 13, 31, 97}) {
        Rng rng(static_cast<uint64_t>(n));
        std::vector<double> re(static_cast<size_t>(n)), im(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            re[static_cast<size_t>(i)] = rng.uniform(-1.0, 1.0);
            im[static_cast<size_t>(i)] = rng.uniform(-1.0, 1.0);
        }
        std::vector<double> ore, oim;
        oracle::dft2(re, im, 1, n, false, ore, oim);   // 1-row 2D DFT is the 1D DFT
        auto plan = fft_plan(n);
        std::vector<double> pre = re, pim = im;
        plan->forward(pre.data(), pim.data());
        for (int i = 0; i < n; ++i) {
            CHECK(pre[static_cast<size_t>(i)] == doctest::Approx(ore[static_cast<size_t>(i)]).epsilon(1e-9));
            CHECK(pim[static_cast<size_t>(i)] == doctest::Approx(oim[static_cast<size_t>(i)]).epsilon(1e-9));
        }
    }
}

TEST_CASE("ifft2_real returns the real part and rejects asymmetric spectra") {
    Rng rng(55);
    std::vector<double> img(16 * 16);
    for (double& v : img) v = rng.uniform(0.0, 1.0);
    const ComplexGrid spec = fft2(img.data(), 16, 16);
    const Tensor back = ifft2_real(spec);
    for (size_t i = 0; i < img.size(); ++i) {
        CHECK(back.data()[i] == doctest::Approx(img[i]).epsilon(1e-10));
    }

    // A spectrum violating conjugate symmetry cannot be a real image.
    ComplexGrid bad = spec;
    bad.im[1] += 10.0;
    CHECK_THROWS_AS(ifft2_real(bad), FilterSymmetryError);
}

TEST_CASE("center shift moves DC and unshift undoes it, odd and even") {
    for (auto [h, w] : {std::pair{8, 8}, {7, 9}, {5, 4}}) {
        const ComplexGrid g = random_grid(h, w, 900 + static_cast<uint64_t>(h), true);
        const ComplexGrid s = center_shift(g);
        CHECK(s.re[static_cast<size_t>(h / 2) * w + w / 2] == g.re[0]);
        const ComplexGrid u = center_unshift(s);
        for (size_t i = 0; i < g.size(); ++i) {
            CHECK(u.re[i] == g.re[i]);
            CHECK(u.im[i] == g.im[i]);
        }
    }
}

TEST_CASE("fft plans are cached and reused") {
    auto a = fft_plan(24);
    auto b = fft_plan(24);
    CHECK(a.get() == b.get());
    CHECK(a->size() == 24);
}
