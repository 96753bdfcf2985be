#pragma once

#include "dugi/rng.hpp"
#include "dugi/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace dugi {

struct GrayImage {
    int height = 0, width = 0;
    std::vector<uint8_t> pixels;   // row-major, levels 0..255
    std::string source_id;

    uint8_t at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
    uint8_t& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }
};

GrayImage make_image(int height, int width, uint8_t fill = 0);

// Binary PGM (P5, maxval 255) or 8-bit PNG; RGB PNG collapses to the
// channel average. Dispatch is by file magic, not extension.
GrayImage load_gray(const std::string& path);
GrayImage load_pgm(const std::string& path);
GrayImage load_png(const std::string& path);
void save_pgm(const GrayImage& img, const std::string& path);

// Pixels as a [h,w] tensor scaled by `scl` (1/255 for unit range).
Tensor image_tensor(const GrayImage& img, double scl = 1.0);

// Removes every outer row/column whose pixels are all <= zero_threshold.
// Interior zeros are untouched. Idempotent.
GrayImage crop_black_borders(const GrayImage& img, int zero_threshold = 0);

GrayImage random_crop(const GrayImage& img, int size, Rng& rng);

// Deterministic 128-dim descriptor: 64-bin intensity histogram
// (frequencies) followed by an 8x8 mean-pooled thumbnail, then L2
// normalized. A stand-in for a learned embedding so that curation has
// no dependency on pretrained weights.
std::vector<double> dedup_feature(const GrayImage& img);

struct CorpusEntry {
    std::string path;
    std::string scene_group;
    std::vector<double> feature;
    bool kept = true;
    double max_sim = 0.0;   // similarity to the scene anchor; 0 for the anchor itself
};

// Per scene group: shuffle under a seed-derived stream, take the first
// entry as anchor, and drop every other entry whose cosine similarity
// with the anchor exceeds the threshold. The anchor is always kept.
void dedup_scan(std::vector<CorpusEntry>& entries, double threshold, uint64_t seed);

struct ResolutionStats {
    std::map<std::pair<int, int>, long long> counts;   // (width, height) -> count
    long long total = 0;
    long long unreadable = 0;
    std::vector<std::string> warnings;
};

ResolutionStats resolution_report(const std::vector<std::string>& paths);

// CSV rows `width,height,count`, count descending (ties by ascending
// width then height), preceded by a header line.
void write_resolution_csv(const ResolutionStats& stats, const std::string& path);

} // namespace dugi
