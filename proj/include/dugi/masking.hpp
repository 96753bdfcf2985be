#pragma once

#include "dugi/image.hpp"
#include "dugi/rng.hpp"

#include <string>
#include <vector>

namespace dugi {

enum class EntropySource { raw_pixels, conv_features };

enum class MaskStrategy { entropy, random, gray_value };

MaskStrategy mask_strategy_from_string(const std::string& s);
std::string to_string(MaskStrategy s);

struct TokenGrid {
    int rows = 0, cols = 0;
    int patch = 0;                              // patch side in pixels (raw mode)
    std::vector<std::vector<double>> tokens;    // N = rows*cols payloads
    EntropySource source = EntropySource::raw_pixels;

    int count() const { return rows * cols; }
};

TokenGrid grid_from_image(const GrayImage& img, int patch);
TokenGrid grid_from_features(const std::vector<double>& feats, int rows, int cols, int dim);

// Shannon entropy in bits over the payload's level histogram. Raw
// pixel payloads carry integer levels already; feature payloads are
// quantized into J uniform bins over [lo, hi].
struct Binning {
    EntropySource source = EntropySource::raw_pixels;
    double lo = 0.0, hi = 255.0;
};

double token_entropy(const std::vector<double>& payload, int J, const Binning& binning);

// Per-token entropy, parallel over tokens; the serial form is the
// reference for the bitwise-equality tests.
std::vector<double> entropy_map_serial(const TokenGrid& grid, int J = 256);
std::vector<double> entropy_map(const TokenGrid& grid, int J = 256);

struct MaskSelection {
    double lambda = 0.0;
    int total = 0;
    std::vector<int> keep_indices;    // ascending
    std::vector<uint8_t> mask;        // mask[i] == 1 iff i kept
    std::vector<double> entropies;    // scores that drove the selection
};

// Keeps the N - floor(lambda*N) highest-scoring tokens; ties broken by
// ascending token index (so equal scores favor higher indices for
// keeping). Pure and deterministic.
MaskSelection select_from_scores(const std::vector<double>& scores, double lambda);
MaskSelection select_mask(const TokenGrid& grid, double lambda, int J = 256);

struct MaskedTokens {
    std::vector<int> visible_indices;                  // ascending
    std::vector<std::vector<double>> visible_payloads; // original index order
    std::vector<int> masked_indices;                   // ascending complement
};

MaskedTokens apply_mask(const TokenGrid& grid, const MaskSelection& sel);

// entropy delegates to select_mask; random keeps a uniform sample;
// gray_value ranks tokens by mean intensity descending and keeps every
// 4th ranked position (then offsets 1, 2, 3) until the quota is met.
MaskSelection baseline_mask(const TokenGrid& grid, double lambda, MaskStrategy strategy,
                            Rng* rng = nullptr);

// Visualizations: full-resolution PGMs on the token-aligned image.
// Entropy values are linearly rescaled to 0..255; masked tokens render
// as mid-gray 128 in the mask view.
void write_entropy_pgm(const std::vector<double>& entropies, int rows, int cols, int patch,
                       const std::string& path);
void write_mask_pgm(const GrayImage& img, const MaskSelection& sel, int rows, int cols,
                    int patch, const std::string& path);

} // namespace dugi
