#include "dugi/synth.hpp"

#include "dugi/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace dugi {

namespace {

double blob(double r, double c, double cr, double cc, double sigma) {
    const double dr = r - cr, dc = c - cc;
    return std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
}

uint8_t level(double v, int lo) {
    return static_cast<uint8_t>(std::lround(std::clamp(v, static_cast<double>(lo), 255.0)));
}

// One synthetic frame. Kinds cycle through blob fields, ramps, smooth
// sinusoids, and a blob field carrying a high-contrast checker patch.
// lo_clamp = 1 keeps every pixel nonzero so planted borders stay the
// only zero regions in the curation corpus.
GrayImage render(int size, int kind, Rng& rng, int lo_clamp) {
    GrayImage img = make_image(size, size);
    std::vector<double> field(static_cast<size_t>(size) * size, 0.0);
    auto f = [&](int r, int c) -> double& {
        return field[static_cast<size_t>(r) * size + c];
    };
    switch (kind % 4) {
        case 0: {
            const double base = 20.0 + rng.uniform() * 40.0;
            const int nb = 2 + rng.uniform_int(2);
            std::vector<double> cr(static_cast<size_t>(nb)), cc(static_cast<size_t>(nb)),
                pk(static_cast<size_t>(nb)), sg(static_cast<size_t>(nb));
            for (int i = 0; i < nb; ++i) {
                cr[static_cast<size_t>(i)] = rng.uniform() * size;
                cc[static_cast<size_t>(i)] = rng.uniform() * size;
                pk[static_cast<size_t>(i)] = 110.0 + rng.uniform() * 110.0;
                sg[static_cast<size_t>(i)] = 0.12 * size + rng.uniform() * 0.18 * size;
            }
            for (int r = 0; r < size; ++r) {
                for (int c = 0; c < size; ++c) {
                    double v = base;
                    for (int i = 0; i < nb; ++i) {
                        v += pk[static_cast<size_t>(i)] *
                             blob(r, c, cr[static_cast<size_t>(i)], cc[static_cast<size_t>(i)],
                                  sg[static_cast<size_t>(i)]);
                    }
                    f(r, c) = v;
                }
            }
            break;
        }
        case 1: {
            const double lo = 10.0 + rng.uniform() * 40.0;
            const double hi = 120.0 + rng.uniform() * 80.0;
            const bool horizontal = rng.uniform_int(2) == 0;
            const double cr = rng.uniform() * size, cc = rng.uniform() * size;
            const double pk = 90.0 + rng.uniform() * 90.0;
            const double sg = 0.1 * size + rng.uniform() * 0.1 * size;
            for (int r = 0; r < size; ++r) {
                for (int c = 0; c < size; ++c) {
                    const double t = (horizontal ? c : r) / static_cast<double>(size - 1);
                    f(r, c) = lo + (hi - lo) * t + pk * blob(r, c, cr, cc, sg);
                }
            }
            break;
        }
        case 2: {
            const double base = 60.0 + rng.uniform() * 60.0;
            const double amp = 40.0 + rng.uniform() * 50.0;
            const double fr = 1 + rng.uniform_int(2), fc = 1 + rng.uniform_int(2);
            const double pr = rng.uniform() * 6.2831853, pc = rng.uniform() * 6.2831853;
            for (int r = 0; r < size; ++r) {
                for (int c = 0; c < size; ++c) {
                    f(r, c) = base + amp * std::sin(6.2831853 * fr * r / size + pr) *
                                        std::sin(6.2831853 * fc * c / size + pc);
                }
            }
            break;
        }
        default: {
            const double base = 30.0 + rng.uniform() * 30.0;
            const double cr = rng.uniform() * size, cc = rng.uniform() * size;
            const double pk = 120.0 + rng.uniform() * 80.0;
            const double sg = 0.15 * size + rng.uniform() * 0.15 * size;
            for (int r = 0; r < size; ++r) {
                for (int c = 0; c < size; ++c) {
                    f(r, c) = base + pk * blob(r, c, cr, cc, sg);
                }
            }
            // High-entropy ornament that entropy masking should keep
            // visible: a small 2-pixel checkerboard.
            const int side = std::max(8, size / 5);
            const int r0 = rng.uniform_int(std::max(1, size - side));
            const int c0 = rng.uniform_int(std::max(1, size - side));
            for (int r = r0; r < r0 + side && r < size; ++r) {
                for (int c = c0; c < c0 + side && c < size; ++c) {
                    f(r, c) = ((r / 2 + c / 2) % 2 == 0) ? base + 120.0 : std::max(base - 25.0, 2.0);
                }
            }
            break;
        }
    }
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            img.at(r, c) = level(f(r, c) + rng.normal(0.0, 2.0), lo_clamp);
        }
    }
    return img;
}

// Adds small pixel noise outside the zero ring, keeping the interior
// strictly positive so border cropping stays exact.
GrayImage jitter(const GrayImage& src, Rng& rng, int border) {
    GrayImage out = src;
    for (int r = 0; r < src.height; ++r) {
        for (int c = 0; c < src.width; ++c) {
            const bool ring = r < border || c < border || r >= src.height - border ||
                              c >= src.width - border;
            if (ring) continue;
            out.at(r, c) = level(src.at(r, c) + rng.normal(0.0, 1.2), 1);
        }
    }
    return out;
}

void plant_border(GrayImage& img, int border) {
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            if (r < border || c < border || r >= img.height - border ||
                c >= img.width - border) {
                img.at(r, c) = 0;
            }
        }
    }
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (size_t i = 0; i < a.size(); ++i) d += a[i] * b[i];
    return d;
}

std::vector<double> cropped_feature(const GrayImage& img, int border) {
    return dedup_feature(border > 0 ? crop_black_borders(img) : img);
}

} // namespace

std::string synth_training_corpus(const std::string& dir, int count, int size, uint64_t seed) {
    if (count < 1 || size < 8) throw PreconditionError("synth: need count >= 1 and size >= 8");
    fs::create_directories(dir);
    Rng rng(seed);
    std::vector<std::string> names;
    names.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        GrayImage img = render(size, i, rng, 0);
        char name[32];
        std::snprintf(name, sizeof(name), "img%03d.pgm", i);
        img.source_id = name;
        save_pgm(img, (fs::path(dir) / name).string());
        names.push_back(name);
    }
    const std::string list = (fs::path(dir) / "corpus.txt").string();
    std::ofstream out(list, std::ios::binary);
    if (!out) throw IoError("cannot write " + list);
    for (const std::string& n : names) out << n << "\n";
    if (!out) throw IoError("write failure on " + list);
    return list;
}

std::vector<CurationPlant> synth_curation_corpus(const std::string& dir, uint64_t seed) {
    fs::create_directories(dir);
    const int size = 96;
    std::vector<CurationPlant> plants;
    std::vector<GrayImage> images;

    auto push = [&](GrayImage img, const std::string& name, const std::string& scene,
                    bool dup_member, int border) {
        img.source_id = name;
        CurationPlant p;
        p.path = name;
        p.scene = scene;
        p.dup_member = dup_member;
        p.border = border;
        p.content_w = size - 2 * border;
        p.content_h = size - 2 * border;
        plants.push_back(std::move(p));
        images.push_back(std::move(img));
    };

    // Near-duplicate scenes: every member pair must stay above the
    // exclusion threshold no matter which member becomes the anchor.
    auto make_dup_scene = [&](const std::string& scene, int members, int kind, int border,
                              uint64_t sub) {
        for (int attempt = 0; attempt < 20; ++attempt) {
            Rng rng(seed ^ fnv1a(scene) ^ (sub + static_cast<uint64_t>(attempt) * 0x10001ull));
            GrayImage base = render(size, kind, rng, 1);
            std::vector<GrayImage> group{base};
            for (int m = 1; m < members; ++m) group.push_back(jitter(base, rng, border));
            if (border > 0) {
                for (GrayImage& g : group) plant_border(g, border);
            }
            std::vector<std::vector<double>> feats;
            for (const GrayImage& g : group) feats.push_back(cropped_feature(g, border));
            double worst = 1.0;
            for (size_t a = 0; a < feats.size(); ++a) {
                for (size_t b = a + 1; b < feats.size(); ++b) {
                    worst = std::min(worst, cosine(feats[a], feats[b]));
                }
            }
            if (worst <= 0.9) continue;
            for (int m = 0; m < members; ++m) {
                push(std::move(group[static_cast<size_t>(m)]),
                     scene + "_" + std::to_string(m) + ".pgm", scene, true, border);
            }
            return;
        }
        throw PreconditionError("curation synth: could not plant duplicates for " + scene);
    };

    // Scenes whose members are far apart: no exclusions expected
    // whichever member the anchor shuffle picks.
    auto make_distinct_scene = [&](const std::string& scene, uint64_t sub) {
        for (int attempt = 0; attempt < 20; ++attempt) {
            Rng rng(seed ^ fnv1a(scene) ^ (sub + static_cast<uint64_t>(attempt) * 0x10001ull));
            GrayImage dark = make_image(size, size);
            for (int r = 0; r < size; ++r) {
                for (int c = 0; c < size; ++c) {
                    const double v = 8.0 + 40.0 * blob(r, c, size * 0.3, size * 0.6, size * 0.2) +
                                     rng.normal(0.0, 1.5);
                    dark.at(r, c) = level(v, 1);
                }
            }
            GrayImage bright = make_image(size, size);
            for (int r = 0; r < size; ++r) {
                for (int c = 0; c < size; ++c) {
                    const double v = ((r / 4 + c / 4) % 2 == 0) ? 235.0 : 150.0;
                    bright.at(r, c) = level(v + rng.normal(0.0, 1.5), 1);
                }
            }
            if (cosine(dedup_feature(dark), dedup_feature(bright)) > 0.8) continue;
            push(std::move(dark), scene + "_0.pgm", scene, false, 0);
            push(std::move(bright), scene + "_1.pgm", scene, false, 0);
            return;
        }
        throw PreconditionError("curation synth: could not separate members of " + scene);
    };

    for (int i = 0; i < 8; ++i) {
        const int border = (i % 2 == 0) ? 3 + 2 * (i / 2 % 3) : 0;
        make_dup_scene("pair" + std::to_string(i), 2, i, border, 101);
    }
    make_dup_scene("trip0", 3, 0, 0, 202);
    make_dup_scene("trip1", 3, 2, 4, 202);
    for (int i = 0; i < 4; ++i) make_distinct_scene("dist" + std::to_string(i), 303);
    for (int i = 0; i < 20; ++i) {
        const std::string scene = "solo" + (i < 10 ? "0" + std::to_string(i) : std::to_string(i));
        Rng rng(seed ^ fnv1a(scene));
        const int border = (i % 5 == 0) ? 2 + i / 5 : 0;
        GrayImage img = render(size, i, rng, 1);
        if (border > 0) plant_border(img, border);
        push(std::move(img), scene + ".pgm", scene, false, border);
    }

    if (plants.size() != 50) {
        throw PreconditionError("curation synth: expected 50 images, built " +
                                std::to_string(plants.size()));
    }

    for (size_t i = 0; i < plants.size(); ++i) {
        save_pgm(images[i], (fs::path(dir) / plants[i].path).string());
    }
    std::ofstream inputs((fs::path(dir) / "inputs.tsv").string(), std::ios::binary);
    std::ofstream truth((fs::path(dir) / "truth.tsv").string(), std::ios::binary);
    if (!inputs || !truth) throw IoError("cannot write corpus listings in " + dir);
    truth << "path\tscene\tdup_member\tborder\tcontent_w\tcontent_h\n";
    for (const CurationPlant& p : plants) {
        inputs << p.path << "\t" << p.scene << "\n";
        truth << p.path << "\t" << p.scene << "\t" << (p.dup_member ? 1 : 0) << "\t" << p.border
              << "\t" << p.content_w << "\t" << p.content_h << "\n";
    }
    if (!inputs || !truth) throw IoError("write failure on corpus listings in " + dir);
    return plants;
}

} // namespace dugi
