#include "dugi/training.hpp"

#include "dugi/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace dugi {

void TrainConfig::validate() const {
    if (base_lr <= 0.0) throw PreconditionError("base_lr must be positive");
    if (batch_size < 1) throw PreconditionError("batch_size must be >= 1");
    if (epochs < 1) throw PreconditionError("epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs >= epochs) {
        throw PreconditionError("warmup_epochs must be in [0, epochs)");
    }
    if (mask_lambda < 0.0 || mask_lambda >= 1.0) {
        throw PreconditionError("mask_lambda must be in [0, 1)");
    }
    if (weight_decay < 0.0) throw PreconditionError("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw PreconditionError("betas must be in [0, 1)");
    }
    if (eps <= 0.0) throw PreconditionError("eps must be positive");
    if (min_lr < 0.0 || min_lr > base_lr) {
        throw PreconditionError("min_lr must be in [0, base_lr]");
    }
    if (crop_size < 1) throw PreconditionError("crop_size must be >= 1");
    if (checkpoint_every < 0) throw PreconditionError("checkpoint_every must be >= 0");
}

Tensor masked_mse(const Tensor& pred, const Tensor& target) {
    if (!pred.defined() || pred.size() == 0) return Tensor::scalar(0.0);
    if (pred.shape() != target.shape()) {
        throw ShapeError("masked_mse: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    }
    const Tensor diff = sub(pred, target);
    return mean(mul(diff, diff));
}

double lr_at(int step, int total_steps, int warmup_steps, double base_lr, double min_lr) {
    if (step < 0 || step > total_steps) throw PreconditionError("lr_at: step out of range");
    if (warmup_steps < 0 || warmup_steps >= total_steps) {
        throw PreconditionError("lr_at: warmup_steps must be in [0, total_steps)");
    }
    if (warmup_steps > 0 && step <= warmup_steps) {
        return base_lr * static_cast<double>(step) / warmup_steps;
    }
    const double progress =
        static_cast<double>(step - warmup_steps) / (total_steps - warmup_steps);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

void adamw_step(ParamStore& params, OptimState& st, double lr, const TrainConfig& tc) {
    if (lr < 0.0) throw PreconditionError("adamw: lr must be >= 0");
    const int n = params.count();
    if (st.m.empty()) {
        st.m.resize(static_cast<size_t>(n));
        st.v.resize(static_cast<size_t>(n));
    }
    st.step += 1;
    const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(st.step));
    for (int id = 0; id < n; ++id) {
        const Tensor& p = params.at(id);
        const size_t sz = p.size();
        std::vector<double>& m = st.m[static_cast<size_t>(id)];
        std::vector<double>& v = st.v[static_cast<size_t>(id)];
        if (m.empty()) {
            m.assign(sz, 0.0);
            v.assign(sz, 0.0);
        }
        const std::vector<double>& g = p.grad();
        const bool has_grad = !g.empty();
        if (has_grad) {
            for (double gv : g) {
                if (!std::isfinite(gv)) {
                    throw PreconditionError("non-finite gradient for parameter " +
                                            params.name_of(id));
                }
            }
        }
        std::vector<double> next = p.data();
        const bool decay = !params.decay_exempt(id) && tc.weight_decay != 0.0;
        for (size_t i = 0; i < sz; ++i) {
            const double gi = has_grad ? g[i] : 0.0;
            m[i] = tc.beta1 * m[i] + (1.0 - tc.beta1) * gi;
            v[i] = tc.beta2 * v[i] + (1.0 - tc.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double x = next[i];
            if (decay) x -= lr * tc.weight_decay * next[i];
            x -= lr * mhat / (std::sqrt(vhat) + tc.eps);
            next[i] = x;
        }
        params.replace(id, Tensor::from_data(p.shape(), std::move(next)));
    }
}

std::vector<std::string> load_corpus_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus list " + path);
    const fs::path base = fs::path(path).parent_path();
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::string p = line;
        if (line.find('\t') != std::string::npos) {
            std::vector<std::string> cols;
            std::istringstream ss(line);
            std::string col;
            while (std::getline(ss, col, '\t')) cols.push_back(col);
            if (cols.size() < 3) throw FormatError(path + ": bad manifest row '" + line + "'");
            if (cols[0] == "path") continue;   // header row
            if (cols[2] != "1") continue;      // excluded by curation
            p = cols[0];
        }
        fs::path fp(p);
        out.push_back(fp.is_absolute() ? fp.string() : (base / fp).string());
    }
    return out;
}

TrainResult train(const ModelConfig& mc, const TrainConfig& tc, bool quiet) {
    mc.validate();
    tc.validate();
    if (tc.corpus.empty()) throw PreconditionError("no corpus configured");

    TrainResult res;
    std::vector<GrayImage> images;
    for (const std::string& p : load_corpus_list(tc.corpus)) {
        GrayImage img;
        try {
            img = load_gray(p);
        } catch (const std::exception& e) {
            ++res.skipped_images;
            if (!quiet) std::cerr << "skipping " << p << ": " << e.what() << "\n";
            continue;
        }
        if (img.height < tc.crop_size || img.width < tc.crop_size) {
            ++res.skipped_images;
            if (!quiet) {
                std::cerr << "skipping " << p << ": " << img.width << "x" << img.height
                          << " smaller than crop " << tc.crop_size << "\n";
            }
            continue;
        }
        images.push_back(std::move(img));
    }
    if (images.empty()) {
        throw PreconditionError("no usable images in corpus (" +
                                std::to_string(res.skipped_images) + " skipped)");
    }

    const int n = static_cast<int>(images.size());
    const int steps_per_epoch = n / tc.batch_size;
    if (steps_per_epoch < 1) {
        throw PreconditionError("corpus of " + std::to_string(n) +
                                " images is smaller than one batch");
    }
    const int total_steps = tc.epochs * steps_per_epoch;
    const int warmup_steps = tc.warmup_epochs * steps_per_epoch;

    DugiMae model(mc, tc.seed);
    OptimState opt;
    Rng data_rng(tc.seed ^ 0x9e3779b97f4a7c15ull);

    fs::create_directories(tc.out_dir);
    res.metrics_csv = (fs::path(tc.out_dir) / "metrics.csv").string();
    std::ofstream metrics(res.metrics_csv, std::ios::binary);
    if (!metrics) throw IoError("cannot write " + res.metrics_csv);
    metrics << "step,epoch,lr,loss\n";

    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        data_rng.shuffle(order);
        for (int s = 0; s < steps_per_epoch; ++s) {
            const int global_step = epoch * steps_per_epoch + s + 1;
            const double lr = lr_at(global_step, total_steps, warmup_steps, tc.base_lr, tc.min_lr);

            Tape::Scope scope;
            Tensor batch_loss;
            for (int b = 0; b < tc.batch_size; ++b) {
                const GrayImage& img = images[static_cast<size_t>(order[static_cast<size_t>(
                    s * tc.batch_size + b)])];
                const GrayImage crop = random_crop(img, tc.crop_size, data_rng);
                const MaskSelection sel =
                    model.make_mask(crop, tc.mask_lambda, tc.strategy, &data_rng);
                const PretrainResult out = model.pretrain_forward(crop, sel);
                batch_loss = batch_loss.defined() ? add(batch_loss, out.loss) : out.loss;
            }
            batch_loss = scale(batch_loss, 1.0 / tc.batch_size);
            const double loss_value = batch_loss.item();
            if (batch_loss.requires_grad()) {
                scope.tape().backward(batch_loss);
            }
            adamw_step(model.params(), opt, lr, tc);

            res.losses.push_back(loss_value);
            char row[128];
            std::snprintf(row, sizeof(row), "%d,%d,%.17g,%.17g\n", global_step, epoch + 1, lr,
                          loss_value);
            metrics << row;
        }
        if (tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0 &&
            epoch + 1 < tc.epochs) {
            model.save_checkpoint(
                (fs::path(tc.out_dir) / ("ckpt_epoch_" + std::to_string(epoch + 1) + ".dugi"))
                    .string());
        }
        if (!quiet) {
            std::cerr << "epoch " << (epoch + 1) << "/" << tc.epochs << " loss "
                      << res.losses.back() << "\n";
        }
    }
    metrics.flush();
    if (!metrics) throw IoError("write failure on " + res.metrics_csv);

    res.steps = total_steps;
    res.final_checkpoint = (fs::path(tc.out_dir) / "ckpt_final.dugi").string();
    model.save_checkpoint(res.final_checkpoint);
    return res;
}

namespace {
std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t");
    size_t b = s.find_last_not_of(" \t");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

int parse_int(const std::string& v, const std::string& key, int line) {
    try {
        size_t used = 0;
        const int out = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("bad integer for " + key + ": '" + v + "'", line);
    }
}

double parse_double(const std::string& v, const std::string& key, int line) {
    try {
        size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("bad number for " + key + ": '" + v + "'", line);
    }
}

uint64_t parse_u64(const std::string& v, const std::string& key, int line) {
    try {
        size_t used = 0;
        const unsigned long long out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("bad unsigned integer for " + key + ": '" + v + "'", line);
    }
}

std::array<int, 3> parse_int3(const std::string& v, const std::string& key, int line) {
    std::array<int, 3> out{};
    std::istringstream is(v);
    char s1 = 0, s2 = 0;
    if (!(is >> out[0] >> s1 >> out[1] >> s2 >> out[2]) || s1 != '/' || s2 != '/') {
        throw ConfigError("bad triple for " + key + " (want a/b/c): '" + v + "'", line);
    }
    std::string rest;
    if (is >> rest) throw ConfigError("trailing text after triple for " + key, line);
    return out;
}
} // namespace

void apply_config_kv(const std::string& key, const std::string& value, ModelConfig& mc,
                     TrainConfig& tc, int line_no) {
    if (key == "base_lr") tc.base_lr = parse_double(value, key, line_no);
    else if (key == "weight_decay") tc.weight_decay = parse_double(value, key, line_no);
    else if (key == "batch_size") tc.batch_size = parse_int(value, key, line_no);
    else if (key == "epochs") tc.epochs = parse_int(value, key, line_no);
    else if (key == "warmup_epochs") tc.warmup_epochs = parse_int(value, key, line_no);
    else if (key == "mask_lambda") {
        tc.mask_lambda = parse_double(value, key, line_no);
        mc.mask_lambda = tc.mask_lambda;
    } else if (key == "seed") tc.seed = parse_u64(value, key, line_no);
    else if (key == "beta1") tc.beta1 = parse_double(value, key, line_no);
    else if (key == "beta2") tc.beta2 = parse_double(value, key, line_no);
    else if (key == "eps") tc.eps = parse_double(value, key, line_no);
    else if (key == "min_lr") tc.min_lr = parse_double(value, key, line_no);
    else if (key == "crop_size") tc.crop_size = parse_int(value, key, line_no);
    else if (key == "checkpoint_every") tc.checkpoint_every = parse_int(value, key, line_no);
    else if (key == "mask_strategy") {
        try {
            tc.strategy = mask_strategy_from_string(value);
        } catch (const std::exception& e) {
            throw ConfigError(e.what(), line_no);
        }
    } else if (key == "corpus") tc.corpus = value;
    else if (key == "out_dir") tc.out_dir = value;
    else if (key == "patch_strides") mc.patch_strides = parse_int3(value, key, line_no);
    else if (key == "stage_depths") mc.stage_depths = parse_int3(value, key, line_no);
    else if (key == "embed_dims") mc.embed_dims = parse_int3(value, key, line_no);
    else if (key == "heads") mc.heads = parse_int3(value, key, line_no);
    else if (key == "decoder_depth") mc.decoder_depth = parse_int(value, key, line_no);
    else if (key == "decoder_dim") mc.decoder_dim = parse_int(value, key, line_no);
    else if (key == "ddg_blocks") mc.ddg_blocks = parse_int(value, key, line_no);
    else if (key == "ddg_input_stage") {
        try {
            mc.ddg_input_stage = ddg_stage_from_string(value);
        } catch (const std::exception& e) {
            throw ConfigError(e.what(), line_no);
        }
    } else if (key == "afdm_variant") {
        try {
            mc.afdm_variant = filter_variant_from_string(value);
        } catch (const std::exception& e) {
            throw ConfigError(e.what(), line_no);
        }
    } else {
        throw ConfigError("unknown config key '" + key + "'", line_no);
    }
}

void apply_config_file(const std::string& path, ModelConfig& mc, TrainConfig& tc) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("expected 'key = value', got '" + t + "'", line_no);
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) throw ConfigError("empty key", line_no);
        apply_config_kv(key, value, mc, tc, line_no);
    }
}

} // namespace dugi
