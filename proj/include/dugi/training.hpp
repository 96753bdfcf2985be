#pragma once

#include "dugi/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dugi {

struct TrainConfig {
    double base_lr = 1.5e-4;
    double weight_decay = 0.05;
    int batch_size = 8;
    int epochs = 20;
    int warmup_epochs = 2;
    double mask_lambda = 0.75;
    uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double min_lr = 0.0;
    int crop_size = 64;
    int checkpoint_every = 0;        // epochs between checkpoints; 0 keeps only the final one
    MaskStrategy strategy = MaskStrategy::entropy;
    std::string corpus;              // image list or curation manifest
    std::string out_dir = ".";

    void validate() const;
};

// Mean over all elements of (pred - target)^2; callers pass the masked
// rows only. Zero (constant) for empty inputs.
Tensor masked_mse(const Tensor& pred, const Tensor& target);

// Linear 0 -> base_lr over [0, warmup_steps], then cosine from base_lr
// down to min_lr at total_steps. step may be 0..total_steps.
double lr_at(int step, int total_steps, int warmup_steps, double base_lr, double min_lr);

struct OptimState {
    std::vector<std::vector<double>> m, v;   // indexed by parameter id
    long long step = 0;
};

// One decoupled-weight-decay Adam update over every parameter in the
// store, reading gradients left by the last backward pass (parameters
// that never entered the graph count as zero-gradient). Decay skips
// parameters registered as exempt.
void adamw_step(ParamStore& params, OptimState& st, double lr, const TrainConfig& tc);

struct TrainResult {
    std::vector<double> losses;      // batch-mean masked MSE per optimizer step
    int steps = 0;
    int skipped_images = 0;
    std::string metrics_csv;
    std::string final_checkpoint;
};

// Reads an image list: either one path per line or a curation manifest
// (path<TAB>scene<TAB>kept<TAB>max_sim, only kept rows used). Relative
// paths resolve against the list file's directory.
std::vector<std::string> load_corpus_list(const std::string& path);

TrainResult train(const ModelConfig& mc, const TrainConfig& tc, bool quiet = false);

// Flat `key = value` config text; '#' starts a comment, blank lines are
// skipped, later values win. Unknown keys or bad values raise
// ConfigError carrying the 1-based line number.
void apply_config_file(const std::string& path, ModelConfig& mc, TrainConfig& tc);
void apply_config_kv(const std::string& key, const std::string& value, ModelConfig& mc,
                     TrainConfig& tc, int line_no = 0);

} // namespace dugi
