#include "dugi/image.hpp"

#include "dugi/common.hpp"
#include "dugi/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <doctest.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <vector>

using namespace dugi;
using testutil::TmpDir;

namespace {

// --- minimal PNG encoder, independent of the production decoder ----------
//
// Builds signature + IHDR + one IDAT + IEND with zlib `compress`. Filters
// are applied per scanline from the raw bytes, so decoding must undo them.

void put_be32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(static_cast<uint8_t>(x >> 24));
    v.push_back(static_cast<uint8_t>(x >> 16));
    v.push_back(static_cast<uint8_t>(x >> 8));
    v.push_back(static_cast<uint8_t>(x));
}

void put_chunk(std::vector<uint8_t>& out, const char* type, const std::vector<uint8_t>& data) {
    put_be32(out, static_cast<uint32_t>(data.size()));
    const size_t body = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(0L, out.data() + body, static_cast<uInt>(4 + data.size()));
    put_be32(out, static_cast<uint32_t>(crc));
}

uint8_t paeth_pred(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
    if (pb <= pc) return static_cast<uint8_t>(b);
    return static_cast<uint8_t>(c);
}

// `samples` holds the unfiltered scanlines, h*w*channels bytes (or twice
// that for 16-bit). `filters[r]` picks the filter for scanline r.
void write_png_file(const std::string& path, int w, int h, int color_type, int bit_depth,
                    const std::vector<uint8_t>& samples, const std::vector<int>& filters) {
    int channels = 0;
    switch (color_type) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 4: channels = 2; break;
        case 6: channels = 4; break;
        default: REQUIRE(false);
    }
    const int bpp = channels * (bit_depth / 8);
    const size_t stride = static_cast<size_t>(w) * bpp;
    REQUIRE(samples.size() == stride * static_cast<size_t>(h));
    REQUIRE(filters.size() == static_cast<size_t>(h));

    std::vector<uint8_t> raw;
    raw.reserve((stride + 1) * h);
    const uint8_t* prev = nullptr;
    for (int r = 0; r < h; ++r) {
        const uint8_t* line = samples.data() + stride * static_cast<size_t>(r);
        const int f = filters[static_cast<size_t>(r)];
        raw.push_back(static_cast<uint8_t>(f));
        for (size_t i = 0; i < stride; ++i) {
            const int left = i >= static_cast<size_t>(bpp) ? line[i - bpp] : 0;
            const int up = prev ? prev[i] : 0;
            const int ul = (prev && i >= static_cast<size_t>(bpp)) ? prev[i - bpp] : 0;
            int pred = 0;
            switch (f) {
                case 0: pred = 0; break;
                case 1: pred = left; break;
                case 2: pred = up; break;
                case 3: pred = (left + up) / 2; break;
                case 4: pred = paeth_pred(left, up, ul); break;
                default: REQUIRE(false);
            }
            raw.push_back(static_cast<uint8_t>(line[i] - pred));
        }
        prev = line;
    }

    uLongf zcap = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> zdata(zcap);
    REQUIRE(compress(zdata.data(), &zcap, raw.data(), static_cast<uLong>(raw.size())) == Z_OK);
    zdata.resize(zcap);

    std::vector<uint8_t> file = {137, 80, 78, 71, 13, 10, 26, 10};
    std::vector<uint8_t> ihdr;
    put_be32(ihdr, static_cast<uint32_t>(w));
    put_be32(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(static_cast<uint8_t>(bit_depth));
    ihdr.push_back(static_cast<uint8_t>(color_type));
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(file, "IHDR", ihdr);
    put_chunk(file, "IDAT", zdata);
    put_chunk(file, "IEND", {});

    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(file.data()),
              static_cast<std::streamsize>(file.size()));
    REQUIRE(bool(out));
}

GrayImage pattern_image(int h, int w, uint64_t seed) {
    GrayImage img = make_image(h, w);
    Rng rng(seed);
    for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));
    return img;
}

double feature_cosine(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double dot = 0.0;
    for (size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return dot;
}

} // namespace

TEST_CASE("pgm save/load roundtrip is bit exact") {
    TmpDir tmp("tmp_img_pgm");
    const GrayImage img = pattern_image(13, 29, 41);
    save_pgm(img, tmp.file("a.pgm"));
    const GrayImage back = load_pgm(tmp.file("a.pgm"));
    CHECK(back.height == 13);
    CHECK(back.width == 29);
    CHECK(std::memcmp(back.pixels.data(), img.pixels.data(), img.pixels.size()) == 0);
    CHECK(back.source_id == tmp.file("a.pgm"));
}

TEST_CASE("pgm header comments and odd whitespace are accepted") {
    TmpDir tmp("tmp_img_pgm_hdr");
    std::string body = "P5 # magic comment\n# full line\n 3\t2 # dims\n255\n";
    body += std::string("\x01\x02\x03\x04\x05\x06", 6);
    testutil::write_text(tmp.file("c.pgm"), body);
    const GrayImage img = load_pgm(tmp.file("c.pgm"));
    CHECK(img.width == 3);
    CHECK(img.height == 2);
    CHECK(img.at(1, 2) == 6);
}

TEST_CASE("pgm rejects malformed files with specific messages") {
    TmpDir tmp("tmp_img_pgm_bad");

    testutil::write_text(tmp.file("p2.pgm"), "P2\n2 2\n255\n0 0 0 0\n");
    CHECK_THROWS_AS(load_pgm(tmp.file("p2.pgm")), FormatError);

    // 16-bit data must be refused and the message must say which depth.
    testutil::write_text(tmp.file("deep.pgm"), std::string("P5\n2 2\n65535\n") +
                                                   std::string(8, '\0'));
    try {
        load_pgm(tmp.file("deep.pgm"));
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("65535") != std::string::npos);
    }

    testutil::write_text(tmp.file("short.pgm"), "P5\n4 4\n255\n only-five");
    CHECK_THROWS_AS(load_pgm(tmp.file("short.pgm")), FormatError);

    testutil::write_text(tmp.file("dims.pgm"), "P5\n0 4\n255\n");
    CHECK_THROWS_AS(load_pgm(tmp.file("dims.pgm")), FormatError);

    testutil::write_text(tmp.file("trunc.pgm"), "P5\n2");
    CHECK_THROWS_AS(load_pgm(tmp.file("trunc.pgm")), FormatError);

    CHECK_THROWS_AS(load_pgm(tmp.file("missing.pgm")), IoError);
}

TEST_CASE("png grayscale decodes through every filter type") {
    TmpDir tmp("tmp_img_png_filters");
    const int h = 5, w = 7;
    const GrayImage ref = pattern_image(h, w, 99);
    // One scanline per filter type, plus a repeat of paeth.
    write_png_file(tmp.file("f.png"), w, h, 0, 8, ref.pixels, {0, 1, 2, 3, 4});
    const GrayImage img = load_png(tmp.file("f.png"));
    REQUIRE(img.height == h);
    REQUIRE(img.width == w);
    CHECK(std::memcmp(img.pixels.data(), ref.pixels.data(), ref.pixels.size()) == 0);
}

TEST_CASE("png color types collapse to the expected gray values") {
    TmpDir tmp("tmp_img_png_color");

    SUBCASE("rgb averages the three channels") {
        const int h = 2, w = 3;
        std::vector<uint8_t> px = {
            10, 20, 30,   0, 0, 0,       255, 255, 255,  // row 0
            1,  2,  2,    100, 110, 130, 7, 7, 8,        // row 1
        };
        write_png_file(tmp.file("rgb.png"), w, h, 2, 8, px, {0, 4});
        const GrayImage img = load_png(tmp.file("rgb.png"));
        CHECK(img.at(0, 0) == 20);
        CHECK(img.at(0, 1) == 0);
        CHECK(img.at(0, 2) == 255);
        // ties round away from zero via lround: (1+2+2)/3 = 1.67 -> 2
        CHECK(img.at(1, 0) == 2);
        CHECK(img.at(1, 1) == std::lround((100 + 110 + 130) / 3.0));
        CHECK(img.at(1, 2) == std::lround((7 + 7 + 8) / 3.0));
    }

    SUBCASE("gray+alpha keeps the gray channel and ignores alpha") {
        std::vector<uint8_t> px = {42, 0, 42, 255, 17, 128, 200, 1};
        write_png_file(tmp.file("ga.png"), 2, 2, 4, 8, px, {0, 1});
        const GrayImage img = load_png(tmp.file("ga.png"));
        CHECK(img.at(0, 0) == 42);
        CHECK(img.at(0, 1) == 42);
        CHECK(img.at(1, 0) == 17);
        CHECK(img.at(1, 1) == 200);
    }

    SUBCASE("rgba averages rgb and ignores alpha") {
        std::vector<uint8_t> px = {30, 60, 90, 0, 9, 9, 9, 77};
        write_png_file(tmp.file("rgba.png"), 2, 1, 6, 8, px, {2});
        const GrayImage img = load_png(tmp.file("rgba.png"));
        CHECK(img.at(0, 0) == 60);
        CHECK(img.at(0, 1) == 9);
    }
}

TEST_CASE("png rejects unsupported variants, naming the bit depth") {
    TmpDir tmp("tmp_img_png_bad");

    std::vector<uint8_t> px16(2 * 2 * 2, 0x7f);
    write_png_file(tmp.file("deep.png"), 2, 2, 0, 16, px16, {0, 0});
    try {
        load_png(tmp.file("deep.png"));
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("16") != std::string::npos);
    }

    testutil::write_text(tmp.file("not.png"), "hello");
    CHECK_THROWS_AS(load_png(tmp.file("not.png")), FormatError);

    // signature but nothing else
    std::ofstream out(tmp.file("sig.png"), std::ios::binary);
    const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.write(reinterpret_cast<const char*>(sig), 8);
    out.close();
    CHECK_THROWS_AS(load_png(tmp.file("sig.png")), FormatError);
}

TEST_CASE("load_gray dispatches on file magic, not extension") {
    TmpDir tmp("tmp_img_dispatch");
    const GrayImage ref = pattern_image(4, 6, 7);

    // PGM bytes behind a .png name still load as PGM.
    save_pgm(ref, tmp.file("mislabeled.png"));
    const GrayImage a = load_gray(tmp.file("mislabeled.png"));
    CHECK(std::memcmp(a.pixels.data(), ref.pixels.data(), ref.pixels.size()) == 0);

    write_png_file(tmp.file("mislabeled.pgm"), 6, 4, 0, 8, ref.pixels, {0, 0, 0, 0});
    const GrayImage b = load_gray(tmp.file("mislabeled.pgm"));
    CHECK(std::memcmp(b.pixels.data(), ref.pixels.data(), ref.pixels.size()) == 0);

    testutil::write_text(tmp.file("junk.bin"), "BM not an image");
    CHECK_THROWS_AS(load_gray(tmp.file("junk.bin")), FormatError);
}

TEST_CASE("crop_black_borders trims exactly the dark frame") {
    // 2-wide zero ring around a 3x4 block of nonzero values.
    GrayImage img = make_image(7, 8, 0);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) img.at(2 + r, 2 + c) = static_cast<uint8_t>(10 + r * 4 + c);
    }
    const GrayImage out = crop_black_borders(img);
    REQUIRE(out.height == 3);
    REQUIRE(out.width == 4);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) CHECK(out.at(r, c) == 10 + r * 4 + c);
    }
}

TEST_CASE("crop_black_borders leaves interior zeros and borderless images alone") {
    GrayImage img = pattern_image(9, 9, 3);
    // force nonzero edges, zero hole in the middle
    for (int i = 0; i < 9; ++i) {
        img.at(0, i) = img.at(8, i) = img.at(i, 0) = img.at(i, 8) = 200;
    }
    img.at(4, 4) = img.at(4, 5) = 0;
    const GrayImage out = crop_black_borders(img);
    CHECK(out.height == 9);
    CHECK(out.width == 9);
    CHECK(std::memcmp(out.pixels.data(), img.pixels.data(), img.pixels.size()) == 0);
}

TEST_CASE("crop_black_borders handles asymmetric frames and is idempotent") {
    // top 1 row, left 3 cols, bottom 0 rows, right 2 cols of zeros
    GrayImage img = make_image(6, 10, 0);
    for (int r = 1; r < 6; ++r) {
        for (int c = 3; c < 8; ++c) img.at(r, c) = 50;
    }
    const GrayImage once = crop_black_borders(img);
    CHECK(once.height == 5);
    CHECK(once.width == 5);
    const GrayImage twice = crop_black_borders(once);
    CHECK(twice.height == once.height);
    CHECK(twice.width == once.width);
    CHECK(twice.pixels == once.pixels);
}

TEST_CASE("crop_black_borders threshold widens what counts as dark") {
    GrayImage img = make_image(5, 5, 4);   // dim, but not zero
    img.at(2, 2) = 90;
    // default threshold 0: value-4 frame is content
    CHECK(crop_black_borders(img).height == 5);
    // threshold 4 treats the frame as dark
    const GrayImage out = crop_black_borders(img, 4);
    CHECK(out.height == 1);
    CHECK(out.width == 1);
    CHECK(out.at(0, 0) == 90);
    CHECK_THROWS_AS(crop_black_borders(img, -1), PreconditionError);
}

TEST_CASE("crop_black_borders rejects an all-dark image") {
    const GrayImage img = make_image(4, 4, 0);
    CHECK_THROWS_AS(crop_black_borders(img), DegenerateImageError);
    const GrayImage dim = make_image(4, 4, 3);
    CHECK_THROWS_AS(crop_black_borders(dim, 3), DegenerateImageError);
}

TEST_CASE("random_crop copies a contiguous window and is seed deterministic") {
    const GrayImage img = pattern_image(24, 31, 11);

    Rng a(5), b(5);
    const GrayImage crop = random_crop(img, 9, a);
    const int r0 = b.uniform_int(24 - 9 + 1);
    const int c0 = b.uniform_int(31 - 9 + 1);
    REQUIRE(crop.height == 9);
    REQUIRE(crop.width == 9);
    for (int r = 0; r < 9; ++r) {
        for (int c = 0; c < 9; ++c) CHECK(crop.at(r, c) == img.at(r0 + r, c0 + c));
    }

    Rng c1(5);
    const GrayImage again = random_crop(img, 9, c1);
    CHECK(again.pixels == crop.pixels);
}

TEST_CASE("random_crop at full size returns the image, oversize throws") {
    const GrayImage img = pattern_image(8, 8, 2);
    Rng rng(0);
    const GrayImage full = random_crop(img, 8, rng);
    CHECK(full.pixels == img.pixels);
    CHECK_THROWS_AS(random_crop(img, 9, rng), PreconditionError);
    CHECK_THROWS_AS(random_crop(img, 0, rng), PreconditionError);
}

TEST_CASE("random_crop corners are uniform (chi-square over the offset grid)") {
    // 64x64 image, 32x32 crops: both offsets range over 0..32, 33*33 cells.
    const GrayImage img = pattern_image(64, 64, 1);
    const int cells = 33;
    std::vector<long long> counts(static_cast<size_t>(cells) * cells, 0);
    const int trials = 10000;
    Rng rng(20260819);
    for (int t = 0; t < trials; ++t) {
        const int r0 = rng.uniform_int(cells);
        const int c0 = rng.uniform_int(cells);
        ++counts[static_cast<size_t>(r0) * cells + c0];
    }
    const double expect = static_cast<double>(trials) / (cells * cells);
    double chi2 = 0.0;
    for (long long o : counts) {
        const double d = static_cast<double>(o) - expect;
        chi2 += d * d / expect;
    }
    // Wilson-Hilferty approximation of the 99th percentile for df = 1088.
    const double df = cells * cells - 1;
    const double z99 = 2.3263478740408408;
    const double term = 1.0 - 2.0 / (9.0 * df) + z99 * std::sqrt(2.0 / (9.0 * df));
    const double crit = df * term * term * term;
    CHECK(chi2 < crit);

    // And the same bound from below with the 1st percentile, to catch
    // a generator that is "too uniform" (e.g. sequential offsets).
    const double lo_term = 1.0 - 2.0 / (9.0 * df) - z99 * std::sqrt(2.0 / (9.0 * df));
    const double lo_crit = df * lo_term * lo_term * lo_term;
    CHECK(chi2 > lo_crit);
}

TEST_CASE("dedup_feature is unit norm and discriminates") {
    const GrayImage base = pattern_image(40, 40, 77);
    const std::vector<double> f = dedup_feature(base);
    REQUIRE(f.size() == 128);

    double norm = 0.0;
    for (double v : f) norm += v * v;
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-9);

    // identical image, same descriptor
    CHECK(feature_cosine(f, dedup_feature(base)) == doctest::Approx(1.0).epsilon(1e-12));

    // 1% of pixels nudged: still reads as a near duplicate
    GrayImage noisy = base;
    Rng rng(5);
    for (int k = 0; k < 16; ++k) {
        const int r = rng.uniform_int(40), c = rng.uniform_int(40);
        noisy.at(r, c) = static_cast<uint8_t>(std::min(255, noisy.at(r, c) + 12));
    }
    const double near = feature_cosine(f, dedup_feature(noisy));
    CHECK(near > 0.98);

    // inverted image scores strictly below the near duplicate
    GrayImage inv = base;
    for (auto& p : inv.pixels) p = static_cast<uint8_t>(255 - p);
    const double far = feature_cosine(f, dedup_feature(inv));
    CHECK(far < near);
    CHECK(far < 0.995);

    CHECK_THROWS_AS(dedup_feature(GrayImage{}), PreconditionError);
}

TEST_CASE("dedup_feature histogram half matches a direct count") {
    const GrayImage img = pattern_image(16, 16, 9);
    const std::vector<double> f = dedup_feature(img);
    std::vector<double> hist(64, 0.0);
    for (uint8_t p : img.pixels) hist[p / 4] += 1.0 / 256.0;
    // recover the normalization factor from any nonzero thumbnail-free bin
    double raw_norm_sq = 0.0;
    {
        std::vector<double> raw(128, 0.0);
        for (int i = 0; i < 64; ++i) raw[i] = hist[i];
        // thumbnail: 2x2 mean blocks over 16x16, scaled by 255
        for (int i = 0; i < 8; ++i) {
            for (int j = 0; j < 8; ++j) {
                double acc = 0.0;
                for (int r = i * 2; r < i * 2 + 2; ++r) {
                    for (int c = j * 2; c < j * 2 + 2; ++c) acc += img.at(r, c);
                }
                raw[64 + i * 8 + j] = acc / (255.0 * 4.0);
            }
        }
        for (double v : raw) raw_norm_sq += v * v;
        const double inv = 1.0 / std::sqrt(raw_norm_sq);
        for (int i = 0; i < 128; ++i) CHECK(f[i] == doctest::Approx(raw[i] * inv).epsilon(1e-12));
    }
}

TEST_CASE("dedup_scan keeps the anchor and applies a strict threshold") {
    // Synthetic features: unit vectors with hand-picked cosines to v0.
    auto unit = [](std::vector<double> v) {
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        for (double& x : v) x /= n;
        return v;
    };
    auto mix = [&](double cosv, int axis) {
        // cos*e0 + sin*e_axis
        std::vector<double> v(128, 0.0);
        v[0] = cosv;
        v[static_cast<size_t>(axis)] = std::sqrt(1.0 - cosv * cosv);
        return unit(v);
    };

    std::vector<CorpusEntry> entries;
    auto add = [&](const std::string& path, const std::string& scene, std::vector<double> f) {
        CorpusEntry e;
        e.path = path;
        e.scene_group = scene;
        e.feature = std::move(f);
        entries.push_back(std::move(e));
    };

    // Scene A: mutual near-duplicates around e0 (pairwise cos of any two
    // mix(c, j), mix(c, k) vectors with distinct axes is exactly c^2 = 0.998).
    add("a0", "A", mix(0.999, 1));
    add("a1", "A", mix(0.999, 2));
    add("a2", "A", mix(0.999, 3));
    // Scene B: two far-apart members, nobody should be dropped.
    add("b0", "B", mix(1.0, 1));
    add("b1", "B", mix(0.1, 2));
    // Scene C: single member.
    add("c0", "C", mix(0.5, 4));

    std::vector<CorpusEntry> run1 = entries;
    dedup_scan(run1, 0.85, 7);

    std::map<std::string, const CorpusEntry*> by_path;
    for (const CorpusEntry& e : run1) by_path[e.path] = &e;

    // Exactly one anchor per scene, identified by max_sim == 0 and kept.
    for (const std::string scene : {"A", "B", "C"}) {
        int anchors = 0;
        for (const CorpusEntry& e : run1) {
            if (e.scene_group == scene && e.max_sim == 0.0) {
                ++anchors;
                CHECK(e.kept);
            }
        }
        CHECK(anchors == 1);
    }

    // Every non-anchor's fate follows the recorded similarity and the
    // strict > threshold rule.
    for (const CorpusEntry& e : run1) {
        if (e.max_sim == 0.0) continue;
        CHECK(e.kept == !(e.max_sim > 0.85));
        // recompute the similarity against the scene anchor
        for (const CorpusEntry& a : run1) {
            if (a.scene_group == e.scene_group && a.max_sim == 0.0) {
                CHECK(feature_cosine(a.feature, e.feature) ==
                      doctest::Approx(e.max_sim).epsilon(1e-12));
            }
        }
    }

    // Scene A: whoever the anchor is, both others exceed 0.85 and drop.
    int kept_a = 0;
    for (const CorpusEntry& e : run1) {
        if (e.scene_group == "A" && e.kept) ++kept_a;
    }
    CHECK(kept_a == 1);
    // Scene B: cos(b0,b1) = 0.1 < 0.85, both stay.
    CHECK(by_path["b0"]->kept);
    CHECK(by_path["b1"]->kept);
    CHECK(by_path["c0"]->kept);

    // Deterministic under the same seed.
    std::vector<CorpusEntry> run2 = entries;
    dedup_scan(run2, 0.85, 7);
    for (size_t i = 0; i < run1.size(); ++i) {
        CHECK(run1[i].kept == run2[i].kept);
        CHECK(run1[i].max_sim == run2[i].max_sim);
    }

    // A similarity exactly at the threshold is kept (strictly-greater rule).
    std::vector<CorpusEntry> exact;
    entries.clear();
    add("e0", "E", mix(1.0, 1));
    add("e1", "E", mix(1.0, 1));
    exact = entries;
    dedup_scan(exact, 1.0, 3);
    CHECK(exact[0].kept);
    CHECK(exact[1].kept);   // cos == 1.0 is not > 1.0
}

TEST_CASE("dedup_scan rejects bad input") {
    CorpusEntry e;
    e.path = "x";
    e.scene_group = "s";
    e.feature = std::vector<double>(128, 0.5);   // norm far from 1
    std::vector<CorpusEntry> v = {e};
    CHECK_THROWS_AS(dedup_scan(v, 0.85, 0), PreconditionError);

    e.feature.assign(128, 0.0);
    e.feature[0] = 1.0;
    std::vector<CorpusEntry> ok = {e};
    CHECK_THROWS_AS(dedup_scan(ok, 0.0, 0), PreconditionError);
    CHECK_THROWS_AS(dedup_scan(ok, 1.5, 0), PreconditionError);
    CHECK_NOTHROW(dedup_scan(ok, 1.0, 0));
}

TEST_CASE("resolution_report counts sizes and flags unreadable files") {
    TmpDir tmp("tmp_img_res");
    save_pgm(make_image(64, 64, 9), tmp.file("a.pgm"));
    save_pgm(make_image(64, 64, 9), tmp.file("b.pgm"));
    save_pgm(make_image(64, 64, 9), tmp.file("c.pgm"));
    save_pgm(make_image(96, 128, 9), tmp.file("d.pgm"));   // 128 wide, 96 tall
    testutil::write_text(tmp.file("junk.pgm"), "not an image");

    const ResolutionStats stats = resolution_report({
        tmp.file("a.pgm"), tmp.file("b.pgm"), tmp.file("c.pgm"), tmp.file("d.pgm"),
        tmp.file("junk.pgm"), tmp.file("absent.pgm"),
    });
    CHECK(stats.total == 4);
    CHECK(stats.unreadable == 2);
    CHECK(stats.warnings.size() == 2);
    CHECK(stats.counts.at({64, 64}) == 3);
    CHECK(stats.counts.at({128, 96}) == 1);

    write_resolution_csv(stats, tmp.file("res.csv"));
    const auto lines = testutil::split_lines(testutil::read_text(tmp.file("res.csv")));
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "width,height,count");
    CHECK(lines[1] == "64,64,3");
    CHECK(lines[2] == "128,96,1");
}

TEST_CASE("resolution csv breaks count ties by ascending width then height") {
    ResolutionStats stats;
    stats.counts[{512, 480}] = 2;
    stats.counts[{256, 640}] = 2;
    stats.counts[{256, 200}] = 2;
    stats.counts[{100, 100}] = 7;
    TmpDir tmp("tmp_img_res_ties");
    write_resolution_csv(stats, tmp.file("ties.csv"));
    const auto lines = testutil::split_lines(testutil::read_text(tmp.file("ties.csv")));
    REQUIRE(lines.size() == 5);
    CHECK(lines[1] == "100,100,7");
    CHECK(lines[2] == "256,200,2");
    CHECK(lines[3] == "256,640,2");
    CHECK(lines[4] == "512,480,2");
}

TEST_CASE("image_tensor scales pixel levels") {
    GrayImage img = make_image(2, 3, 0);
    for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<uint8_t>(i * 40);
    const Tensor t = image_tensor(img, 1.0 / 255.0);
    REQUIRE(t.shape() == std::vector<int>{2, 3});
    for (size_t i = 0; i < 6; ++i) {
        CHECK(t.data()[i] == doctest::Approx(img.pixels[i] / 255.0).epsilon(1e-15));
    }
}
