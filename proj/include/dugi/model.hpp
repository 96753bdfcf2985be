#pragma once

#include "dugi/frequency.hpp"
#include "dugi/image.hpp"
#include "dugi/masking.hpp"
#include "dugi/tensor.hpp"

#include <array>
#include <map>
#include <string>
#include <vector>

namespace dugi {

enum class DdgInputStage { stage1, stage3 };

DdgInputStage ddg_stage_from_string(const std::string& s);
std::string to_string(DdgInputStage s);

struct ModelConfig {
    std::array<int, 3> patch_strides{4, 8, 16};
    std::array<int, 3> stage_depths{1, 1, 3};
    std::array<int, 3> embed_dims{32, 64, 128};
    std::array<int, 3> heads{2, 4, 8};
    int decoder_depth = 2;
    int decoder_dim = 128;
    double mask_lambda = 0.75;
    int ddg_blocks = 2;
    DdgInputStage ddg_input_stage = DdgInputStage::stage1;
    FilterVariant afdm_variant = FilterVariant::notch;

    void validate() const;
    std::string canonical() const;
    static ModelConfig from_canonical(const std::string& text);
};

// Named learnable tensors. Blocks keep integer ids so that optimizer
// updates (which install successor tensors) stay visible everywhere.
class ParamStore {
public:
    int add(const std::string& name, Tensor t, bool decay_exempt = false);
    Tensor& at(int id) { return tensors_[static_cast<size_t>(id)]; }
    const Tensor& at(int id) const { return tensors_[static_cast<size_t>(id)]; }
    Tensor& by_name(const std::string& name);
    int id_of(const std::string& name) const;
    const std::string& name_of(int id) const { return names_[static_cast<size_t>(id)]; }
    bool decay_exempt(int id) const { return exempt_[static_cast<size_t>(id)] != 0; }
    int count() const { return static_cast<int>(tensors_.size()); }
    void replace(int id, Tensor t);
    std::vector<NamedParam> named() const;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
    std::vector<uint8_t> exempt_;
    std::map<std::string, int> index_;
};

struct PyramidLevel {
    int rows = 0, cols = 0, channels = 0;
    std::vector<double> values;   // row-major, channel-last
};

struct FeaturePyramid {
    PyramidLevel f1, f2, f3, f4;
};

// Multi-head attention with an optional frequency stream: per head,
// softmax(q (ks+kf)^T / sqrt(dk)) (vs+vf). Pass undefined tensors for
// kf/vf to get standard attention. attn_out, when given, receives the
// per-head attention matrices.
Tensor eq5_attention(const Tensor& q, const Tensor& ks, const Tensor& kf,
                     const Tensor& vs, const Tensor& vf, int heads,
                     std::vector<Tensor>* attn_out = nullptr);

// Fixed 2D sine/cosine positional embedding for a token at (row, col);
// dim must be divisible by 4.
std::vector<double> sincos_embed(int dim, int row, int col);

struct PretrainResult {
    Tensor loss;            // scalar; constant 0 when nothing is masked
    Tensor pred;            // [N16, patch^2] full-grid reconstruction (undefined when skipped)
    MaskSelection mask;
    int loss_tokens = 0;    // masked tokens contributing to the loss
};

class DugiMae {
public:
    DugiMae(const ModelConfig& cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    RadialFilterParams afdm_params() const;

    // Entropy scores on the stride-16 grid of the padded crop, with
    // padding-only tokens demoted below every real token so they are
    // masked first. Strategy selects entropy / random / gray_value.
    MaskSelection make_mask(const GrayImage& crop, double lambda, MaskStrategy strategy,
                            Rng* rng = nullptr) const;

    // Full pretraining forward for one crop under a fixed mask:
    // masked image -> AFDM -> hierarchical encoder over visible tokens
    // -> frequency-guided attention -> decoder -> per-patch pixels.
    // Differentiable when called under an active tape.
    PretrainResult pretrain_forward(const GrayImage& crop, const MaskSelection& sel) const;

    // Exposed for the attention tests: runs the guidance blocks on
    // given spatial/frequency token matrices (token counts must match).
    Tensor ddg_forward(const Tensor& spatial, const Tensor& f_freq,
                       std::vector<Tensor>* attn_out = nullptr) const;

    // Inference, no masking: stage outputs as spatial grids plus the
    // strided-downsampled fourth level.
    FeaturePyramid feature_pyramid(const GrayImage& img) const;

    void save_checkpoint(const std::string& path) const;
    static DugiMae load_checkpoint(const std::string& path);

private:
    struct AttnIds {
        int norm_g = -1, norm_b = -1;
        int wq = -1, bq = -1, wk = -1, bk = -1, wv = -1, bv = -1, wo = -1, bo = -1;
        int wkf = -1, bkf = -1, wvf = -1, bvf = -1;
    };
    struct MlpIds {
        int norm_g = -1, norm_b = -1, w1 = -1, b1 = -1, w2 = -1, b2 = -1;
    };
    struct BlockIds {
        AttnIds attn;
        MlpIds mlp;
    };
    struct StageIds {
        int embed_w = -1, embed_b = -1;   // stage 1 only
        int down_w = -1, down_b = -1;     // stages 2, 3
        std::vector<BlockIds> blocks;
    };
    struct DdgIds {
        int embed_w = -1, embed_b = -1;
        int merge_w = -1, merge_b = -1;
        std::vector<BlockIds> blocks;
    };
    struct DecoderIds {
        int embed_w = -1, embed_b = -1, mask_token = -1;
        std::vector<BlockIds> blocks;
        int norm_g = -1, norm_b = -1, head_w = -1, head_b = -1;
    };

    struct EncodeOut {
        Tensor s1, s2, s3;              // visible tokens per stage, block-major
        std::vector<int> kept16;        // kept stride-16 indices, ascending
        int gh16 = 0, gw16 = 0;
    };

    void build_params(uint64_t seed);
    Tensor init_weight(Rng& rng, int rows, int cols, double std_dev);
    BlockIds add_block(Rng& rng, const std::string& prefix, int dim, bool freq_kv);

    Tensor run_block(const Tensor& x, const BlockIds& blk, int heads) const;
    Tensor run_mlp(const Tensor& x, const MlpIds& mlp) const;
    EncodeOut encode(const Tensor& padded_unit, const MaskSelection& sel, int h, int w) const;
    Tensor pos_table(int dim, int rows, int cols, const std::vector<int>& token_idx) const;
    Tensor ddg_branch(const EncodeOut& enc, const Tensor& freq_img) const;

    ModelConfig cfg_;
    ParamStore params_;
    int afdm_alpha_ = -1, afdm_beta_ = -1, afdm_r_ = -1;
    std::array<StageIds, 3> stages_;
    DdgIds ddg_;
    DecoderIds decoder_;
    int pyr_down_w_ = -1, pyr_down_b_ = -1;
};

// Pads to the next multiple of m by edge replication.
GrayImage pad_to_multiple(const GrayImage& img, int m);

// Finite-difference check of the full pretraining loss gradient on a
// small config (every parameter, including the filter's raw alpha,
// beta, and r). size is the toy image side; runs a procedural image,
// an entropy mask at lambda = 0.5, and central differences at the
// given tolerance.
GradCheckReport model_grad_check(int size = 32, double tol = 1e-4, uint64_t seed = 3,
                                 DdgInputStage stage = DdgInputStage::stage1);

void save_pyramid(const FeaturePyramid& p, const std::string& path);
FeaturePyramid load_pyramid(const std::string& path);

} // namespace dugi
