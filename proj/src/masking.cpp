#include "dugi/masking.hpp"

#include "dugi/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dugi {

MaskStrategy mask_strategy_from_string(const std::string& s) {
    if (s == "entropy") return MaskStrategy::entropy;
    if (s == "random") return MaskStrategy::random;
    if (s == "gray_value") return MaskStrategy::gray_value;
    throw PreconditionError("unknown mask strategy '" + s +
                            "' (want entropy, random, or gray_value)");
}

std::string to_string(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::entropy: return "entropy";
        case MaskStrategy::random: return "random";
        case MaskStrategy::gray_value: return "gray_value";
    }
    return "?";
}

TokenGrid grid_from_image(const GrayImage& img, int patch) {
    if (patch <= 0 || img.height % patch != 0 || img.width % patch != 0) {
        throw PreconditionError("grid_from_image: image " + std::to_string(img.width) + "x" +
                                std::to_string(img.height) + " not divisible by patch " +
                                std::to_string(patch));
    }
    TokenGrid g;
    g.rows = img.height / patch;
    g.cols = img.width / patch;
    g.patch = patch;
    g.source = EntropySource::raw_pixels;
    g.tokens.reserve(static_cast<size_t>(g.count()));
    for (int tr = 0; tr < g.rows; ++tr) {
        for (int tc = 0; tc < g.cols; ++tc) {
            std::vector<double> payload(static_cast<size_t>(patch) * patch);
            for (int pr = 0; pr < patch; ++pr) {
                for (int pc = 0; pc < patch; ++pc) {
                    payload[static_cast<size_t>(pr) * patch + pc] =
                        img.at(tr * patch + pr, tc * patch + pc);
                }
            }
            g.tokens.push_back(std::move(payload));
        }
    }
    return g;
}

TokenGrid grid_from_features(const std::vector<double>& feats, int rows, int cols, int dim) {
    if (rows <= 0 || cols <= 0 || dim <= 0 ||
        feats.size() != static_cast<size_t>(rows) * cols * dim) {
        throw PreconditionError("grid_from_features: feature buffer does not match grid");
    }
    TokenGrid g;
    g.rows = rows;
    g.cols = cols;
    g.patch = 0;
    g.source = EntropySource::conv_features;
    g.tokens.reserve(static_cast<size_t>(rows) * cols);
    for (int t = 0; t < rows * cols; ++t) {
        g.tokens.emplace_back(feats.begin() + static_cast<size_t>(t) * dim,
                              feats.begin() + static_cast<size_t>(t + 1) * dim);
    }
    return g;
}

double token_entropy(const std::vector<double>& payload, int J, const Binning& binning) {
    if (payload.empty()) throw PreconditionError("token_entropy: empty payload");
    if (J < 2) throw PreconditionError("token_entropy: need at least 2 levels");
    std::vector<int> hist(static_cast<size_t>(J), 0);
    if (binning.source == EntropySource::raw_pixels) {
        for (double v : payload) {
            int level = static_cast<int>(v);
            if (level < 0 || level >= J) {
                throw PreconditionError("token_entropy: pixel level " + std::to_string(level) +
                                        " outside 0.." + std::to_string(J - 1));
            }
            ++hist[static_cast<size_t>(level)];
        }
    } else {
        const double span = binning.hi - binning.lo;
        for (double v : payload) {
            int level = 0;
            if (span > 0.0) {
                level = static_cast<int>(std::floor((v - binning.lo) / span * J));
                level = std::clamp(level, 0, J - 1);
            }
            ++hist[static_cast<size_t>(level)];
        }
    }
    const double inv_n = 1.0 / static_cast<double>(payload.size());
    double acc = 0.0;
    for (int c : hist) {
        if (c == 0) continue;
        const double p = c * inv_n;
        acc += p * std::log2(p);
    }
    return acc == 0.0 ? 0.0 : -acc;
}

namespace {
Binning grid_binning(const TokenGrid& grid) {
    Binning b;
    b.source = grid.source;
    if (grid.source == EntropySource::conv_features) {
        double lo = grid.tokens.front().front(), hi = lo;
        for (const auto& t : grid.tokens) {
            for (double v : t) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        b.lo = lo;
        b.hi = hi;
    }
    return b;
}
} // namespace

std::vector<double> entropy_map_serial(const TokenGrid& grid, int J) {
    if (grid.tokens.empty()) throw PreconditionError("entropy_map: empty grid");
    const Binning b = grid_binning(grid);
    std::vector<double> out(grid.tokens.size());
    for (size_t i = 0; i < grid.tokens.size(); ++i) {
        out[i] = token_entropy(grid.tokens[i], J, b);
    }
    return out;
}

std::vector<double> entropy_map(const TokenGrid& grid, int J) {
    if (grid.tokens.empty()) throw PreconditionError("entropy_map: empty grid");
    const Binning b = grid_binning(grid);
    std::vector<double> out(grid.tokens.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < static_cast<long long>(grid.tokens.size()); ++i) {
        out[static_cast<size_t>(i)] = token_entropy(grid.tokens[static_cast<size_t>(i)], J, b);
    }
    return out;
}

MaskSelection select_from_scores(const std::vector<double>& scores, double lambda) {
    const int n = static_cast<int>(scores.size());
    if (n < 1) throw PreconditionError("select_mask: no tokens");
    if (lambda < 0.0 || lambda >= 1.0) {
        throw PreconditionError("select_mask: lambda must be in [0, 1), got " +
                                std::to_string(lambda));
    }
    const int keep_count = n - static_cast<int>(std::floor(lambda * n));

    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)]) {
            return scores[static_cast<size_t>(a)] < scores[static_cast<size_t>(b)];
        }
        return a < b;
    });

    MaskSelection sel;
    sel.lambda = lambda;
    sel.total = n;
    sel.entropies = scores;
    sel.keep_indices.assign(order.end() - keep_count, order.end());
    std::sort(sel.keep_indices.begin(), sel.keep_indices.end());
    sel.mask.assign(static_cast<size_t>(n), 0);
    for (int i : sel.keep_indices) sel.mask[static_cast<size_t>(i)] = 1;
    return sel;
}

MaskSelection select_mask(const TokenGrid& grid, double lambda, int J) {
    return select_from_scores(entropy_map(grid, J), lambda);
}

MaskedTokens apply_mask(const TokenGrid& grid, const MaskSelection& sel) {
    if (sel.total != grid.count() ||
        sel.mask.size() != static_cast<size_t>(grid.count())) {
        throw PreconditionError("apply_mask: selection for " + std::to_string(sel.total) +
                                " tokens applied to grid of " + std::to_string(grid.count()));
    }
    MaskedTokens out;
    for (int i = 0; i < grid.count(); ++i) {
        if (sel.mask[static_cast<size_t>(i)]) {
            out.visible_indices.push_back(i);
            out.visible_payloads.push_back(grid.tokens[static_cast<size_t>(i)]);
        } else {
            out.masked_indices.push_back(i);
        }
    }
    return out;
}

MaskSelection baseline_mask(const TokenGrid& grid, double lambda, MaskStrategy strategy,
                            Rng* rng) {
    const int n = grid.count();
    if (strategy == MaskStrategy::entropy) return select_mask(grid, lambda);
    if (lambda < 0.0 || lambda >= 1.0) {
        throw PreconditionError("baseline_mask: lambda must be in [0, 1)");
    }
    const int keep_count = n - static_cast<int>(std::floor(lambda * n));

    MaskSelection sel;
    sel.lambda = lambda;
    sel.total = n;
    sel.entropies.assign(static_cast<size_t>(n), 0.0);

    if (strategy == MaskStrategy::random) {
        if (!rng) throw PreconditionError("baseline_mask: random strategy needs an rng");
        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        rng->shuffle(order);
        sel.keep_indices.assign(order.begin(), order.begin() + keep_count);
    } else {
        // Rank by mean intensity, brightest first, then sample ranked
        // positions 0,4,8,... wrapping to offsets 1,2,3 until filled.
        std::vector<double> means(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            const auto& t = grid.tokens[static_cast<size_t>(i)];
            double acc = 0.0;
            for (double v : t) acc += v;
            means[static_cast<size_t>(i)] = acc / static_cast<double>(t.size());
        }
        sel.entropies = means;
        std::vector<int> ranked(static_cast<size_t>(n));
        std::iota(ranked.begin(), ranked.end(), 0);
        std::sort(ranked.begin(), ranked.end(), [&](int a, int b) {
            if (means[static_cast<size_t>(a)] != means[static_cast<size_t>(b)]) {
                return means[static_cast<size_t>(a)] > means[static_cast<size_t>(b)];
            }
            return a < b;
        });
        for (int offset = 0; offset < 4 && static_cast<int>(sel.keep_indices.size()) < keep_count;
             ++offset) {
            for (int p = offset; p < n && static_cast<int>(sel.keep_indices.size()) < keep_count;
                 p += 4) {
                sel.keep_indices.push_back(ranked[static_cast<size_t>(p)]);
            }
        }
    }

    std::sort(sel.keep_indices.begin(), sel.keep_indices.end());
    sel.mask.assign(static_cast<size_t>(n), 0);
    for (int i : sel.keep_indices) sel.mask[static_cast<size_t>(i)] = 1;
    return sel;
}

void write_entropy_pgm(const std::vector<double>& entropies, int rows, int cols, int patch,
                       const std::string& path) {
    if (entropies.size() != static_cast<size_t>(rows) * cols) {
        throw PreconditionError("write_entropy_pgm: entropy count does not match grid");
    }
    double lo = entropies.front(), hi = lo;
    for (double e : entropies) {
        lo = std::min(lo, e);
        hi = std::max(hi, e);
    }
    const double span = hi - lo;
    GrayImage img = make_image(rows * patch, cols * patch);
    for (int tr = 0; tr < rows; ++tr) {
        for (int tc = 0; tc < cols; ++tc) {
            const double e = entropies[static_cast<size_t>(tr) * cols + tc];
            const uint8_t v = span > 0.0
                ? static_cast<uint8_t>(std::lround((e - lo) / span * 255.0))
                : 0;
            for (int pr = 0; pr < patch; ++pr) {
                for (int pc = 0; pc < patch; ++pc) {
                    img.at(tr * patch + pr, tc * patch + pc) = v;
                }
            }
        }
    }
    save_pgm(img, path);
}

void write_mask_pgm(const GrayImage& img, const MaskSelection& sel, int rows, int cols,
                    int patch, const std::string& path) {
    if (img.height != rows * patch || img.width != cols * patch) {
        throw PreconditionError("write_mask_pgm: image does not match token grid");
    }
    if (sel.total != rows * cols) {
        throw PreconditionError("write_mask_pgm: selection does not match token grid");
    }
    GrayImage out = img;
    for (int tr = 0; tr < rows; ++tr) {
        for (int tc = 0; tc < cols; ++tc) {
            if (sel.mask[static_cast<size_t>(tr) * cols + tc]) continue;
            for (int pr = 0; pr < patch; ++pr) {
                for (int pc = 0; pc < patch; ++pc) {
                    out.at(tr * patch + pr, tc * patch + pc) = 128;
                }
            }
        }
    }
    save_pgm(out, path);
}

} // namespace dugi
