#include "dugi/model.hpp"

#include "dugi/common.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dugi {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

DdgInputStage ddg_stage_from_string(const std::string& s) {
    if (s == "stage1") return DdgInputStage::stage1;
    if (s == "stage3") return DdgInputStage::stage3;
    throw PreconditionError("unknown ddg input stage '" + s + "' (want stage1 or stage3)");
}

std::string to_string(DdgInputStage s) {
    return s == DdgInputStage::stage1 ? "stage1" : "stage3";
}

void ModelConfig::validate() const {
    for (int i = 0; i < 3; ++i) {
        if (stage_depths[static_cast<size_t>(i)] < 1) {
            throw PreconditionError("stage depths must all be >= 1");
        }
        if (embed_dims[static_cast<size_t>(i)] < 4 || embed_dims[static_cast<size_t>(i)] % 4 != 0) {
            throw PreconditionError("embed dims must be positive multiples of 4");
        }
        if (heads[static_cast<size_t>(i)] < 1 ||
            embed_dims[static_cast<size_t>(i)] % heads[static_cast<size_t>(i)] != 0) {
            throw PreconditionError("heads must divide embed dims");
        }
        if (i > 0 && embed_dims[static_cast<size_t>(i)] < embed_dims[static_cast<size_t>(i - 1)]) {
            throw PreconditionError("embed dims must be nondecreasing across stages");
        }
    }
    if (patch_strides[0] < 1 || patch_strides[1] != 2 * patch_strides[0] ||
        patch_strides[2] != 2 * patch_strides[1]) {
        throw PreconditionError("patch strides must double per stage (s, 2s, 4s)");
    }
    if (decoder_depth < 1 || decoder_dim < 4 || decoder_dim % 4 != 0) {
        throw PreconditionError("decoder depth must be >= 1 and decoder dim a multiple of 4");
    }
    if (mask_lambda < 0.0 || mask_lambda >= 1.0) {
        throw PreconditionError("mask lambda must be in [0, 1)");
    }
    if (ddg_blocks < 1) throw PreconditionError("ddg block count must be >= 1");
}

std::string ModelConfig::canonical() const {
    char lam[40];
    std::snprintf(lam, sizeof(lam), "%.17g", mask_lambda);
    std::ostringstream os;
    os << "strides=" << patch_strides[0] << "/" << patch_strides[1] << "/" << patch_strides[2]
       << " depths=" << stage_depths[0] << "/" << stage_depths[1] << "/" << stage_depths[2]
       << " dims=" << embed_dims[0] << "/" << embed_dims[1] << "/" << embed_dims[2]
       << " heads=" << heads[0] << "/" << heads[1] << "/" << heads[2]
       << " dec_depth=" << decoder_depth << " dec_dim=" << decoder_dim
       << " lambda=" << lam << " ddg_blocks=" << ddg_blocks
       << " ddg_stage=" << to_string(ddg_input_stage)
       << " afdm=" << to_string(afdm_variant);
    return os.str();
}

namespace {
std::array<int, 3> parse_triple(const std::string& v, const std::string& key) {
    std::array<int, 3> out{};
    std::istringstream is(v);
    char sep1 = 0, sep2 = 0;
    if (!(is >> out[0] >> sep1 >> out[1] >> sep2 >> out[2]) || sep1 != '/' || sep2 != '/') {
        throw FormatError("bad config triple for " + key + ": '" + v + "'");
    }
    return out;
}
} // namespace

ModelConfig ModelConfig::from_canonical(const std::string& text) {
    ModelConfig cfg;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) {
        const size_t eq = tok.find('=');
        if (eq == std::string::npos) throw FormatError("bad config token '" + tok + "'");
        const std::string key = tok.substr(0, eq);
        const std::string val = tok.substr(eq + 1);
        if (key == "strides") {
            cfg.patch_strides = parse_triple(val, key);
        } else if (key == "depths") {
            cfg.stage_depths = parse_triple(val, key);
        } else if (key == "dims") {
            cfg.embed_dims = parse_triple(val, key);
        } else if (key == "heads") {
            cfg.heads = parse_triple(val, key);
        } else if (key == "dec_depth") {
            cfg.decoder_depth = std::stoi(val);
        } else if (key == "dec_dim") {
            cfg.decoder_dim = std::stoi(val);
        } else if (key == "lambda") {
            cfg.mask_lambda = std::stod(val);
        } else if (key == "ddg_blocks") {
            cfg.ddg_blocks = std::stoi(val);
        } else if (key == "ddg_stage") {
            cfg.ddg_input_stage = ddg_stage_from_string(val);
        } else if (key == "afdm") {
            cfg.afdm_variant = filter_variant_from_string(val);
        } else {
            throw FormatError("unknown config key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

int ParamStore::add(const std::string& name, Tensor t, bool decay_exempt) {
    if (index_.count(name)) throw PreconditionError("duplicate parameter name " + name);
    t.set_requires_grad(true);
    const int id = static_cast<int>(tensors_.size());
    names_.push_back(name);
    tensors_.push_back(std::move(t));
    exempt_.push_back(decay_exempt ? 1 : 0);
    index_[name] = id;
    return id;
}

Tensor& ParamStore::by_name(const std::string& name) {
    return tensors_[static_cast<size_t>(id_of(name))];
}

int ParamStore::id_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw PreconditionError("unknown parameter " + name);
    return it->second;
}

void ParamStore::replace(int id, Tensor t) {
    Tensor& old = tensors_[static_cast<size_t>(id)];
    if (t.shape() != old.shape()) {
        throw ShapeError("parameter " + names_[static_cast<size_t>(id)] +
                         " replacement shape mismatch " + shape_str(old.shape()) + " vs " +
                         shape_str(t.shape()));
    }
    t.set_requires_grad(true);
    old = std::move(t);
}

std::vector<NamedParam> ParamStore::named() const {
    std::vector<NamedParam> out;
    out.reserve(tensors_.size());
    for (size_t i = 0; i < tensors_.size(); ++i) out.push_back({names_[i], tensors_[i]});
    return out;
}

std::vector<double> sincos_embed(int dim, int row, int col) {
    if (dim % 4 != 0) throw PreconditionError("sincos embedding needs dim divisible by 4");
    const int d2 = dim / 2, q = d2 / 2;
    std::vector<double> out(static_cast<size_t>(dim));
    for (int i = 0; i < q; ++i) {
        const double omega = std::pow(10000.0, -static_cast<double>(i) / q);
        out[static_cast<size_t>(i)] = std::sin(row * omega);
        out[static_cast<size_t>(q + i)] = std::cos(row * omega);
        out[static_cast<size_t>(d2 + i)] = std::sin(col * omega);
        out[static_cast<size_t>(d2 + q + i)] = std::cos(col * omega);
    }
    return out;
}

Tensor eq5_attention(const Tensor& q, const Tensor& ks, const Tensor& kf,
                     const Tensor& vs, const Tensor& vf, int heads,
                     std::vector<Tensor>* attn_out) {
    const int dim = q.cols();
    if (ks.cols() != dim || vs.cols() != dim || ks.rows() != vs.rows()) {
        throw ShapeError("attention: inconsistent key/value shapes");
    }
    if (kf.defined() && (kf.rows() != ks.rows() || kf.cols() != dim)) {
        throw ShapeError("attention: frequency keys " + shape_str(kf.shape()) +
                         " do not match spatial keys " + shape_str(ks.shape()));
    }
    if (vf.defined() && (vf.rows() != vs.rows() || vf.cols() != dim)) {
        throw ShapeError("attention: frequency values do not match spatial values");
    }
    if (heads < 1 || dim % heads != 0) {
        throw PreconditionError("attention: heads must divide dim");
    }
    const int dk = dim / heads;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const int lo = h * dk, hi = (h + 1) * dk;
        Tensor qh = col_slice(q, lo, hi);
        Tensor kh = col_slice(ks, lo, hi);
        Tensor vh = col_slice(vs, lo, hi);
        if (kf.defined()) kh = add(kh, col_slice(kf, lo, hi));
        if (vf.defined()) vh = add(vh, col_slice(vf, lo, hi));
        Tensor attn = softmax(scale(matmul_nt(qh, kh), inv_sqrt_dk), 1);
        if (attn_out) attn_out->push_back(attn);
        outs.push_back(matmul(attn, vh));
    }
    return outs.size() == 1 ? outs.front() : concat_cols(outs);
}

DugiMae::DugiMae(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    build_params(seed);
}

Tensor DugiMae::init_weight(Rng& rng, int rows, int cols, double std_dev) {
    std::vector<double> v(static_cast<size_t>(rows) * cols);
    for (double& x : v) x = rng.normal(0.0, std_dev);
    return Tensor::from_data({rows, cols}, std::move(v));
}

DugiMae::BlockIds DugiMae::add_block(Rng& rng, const std::string& prefix, int dim, bool freq_kv) {
    BlockIds b;
    b.attn.norm_g = params_.add(prefix + ".attn.norm.g", Tensor::full({dim}, 1.0), true);
    b.attn.norm_b = params_.add(prefix + ".attn.norm.b", Tensor::zeros({dim}), true);
    b.attn.wq = params_.add(prefix + ".attn.wq", init_weight(rng, dim, dim, 0.02));
    b.attn.bq = params_.add(prefix + ".attn.bq", Tensor::zeros({dim}), true);
    b.attn.wk = params_.add(prefix + ".attn.wk", init_weight(rng, dim, dim, 0.02));
    b.attn.bk = params_.add(prefix + ".attn.bk", Tensor::zeros({dim}), true);
    b.attn.wv = params_.add(prefix + ".attn.wv", init_weight(rng, dim, dim, 0.02));
    b.attn.bv = params_.add(prefix + ".attn.bv", Tensor::zeros({dim}), true);
    b.attn.wo = params_.add(prefix + ".attn.wo", init_weight(rng, dim, dim, 0.02));
    b.attn.bo = params_.add(prefix + ".attn.bo", Tensor::zeros({dim}), true);
    if (freq_kv) {
        b.attn.wkf = params_.add(prefix + ".attn.wkf", init_weight(rng, dim, dim, 0.02));
        b.attn.bkf = params_.add(prefix + ".attn.bkf", Tensor::zeros({dim}), true);
        b.attn.wvf = params_.add(prefix + ".attn.wvf", init_weight(rng, dim, dim, 0.02));
        b.attn.bvf = params_.add(prefix + ".attn.bvf", Tensor::zeros({dim}), true);
    }
    const int hidden = 4 * dim;
    b.mlp.norm_g = params_.add(prefix + ".mlp.norm.g", Tensor::full({dim}, 1.0), true);
    b.mlp.norm_b = params_.add(prefix + ".mlp.norm.b", Tensor::zeros({dim}), true);
    b.mlp.w1 = params_.add(prefix + ".mlp.w1", init_weight(rng, dim, hidden, 0.02));
    b.mlp.b1 = params_.add(prefix + ".mlp.b1", Tensor::zeros({hidden}), true);
    b.mlp.w2 = params_.add(prefix + ".mlp.w2", init_weight(rng, hidden, dim, 0.02));
    b.mlp.b2 = params_.add(prefix + ".mlp.b2", Tensor::zeros({dim}), true);
    return b;
}

void DugiMae::build_params(uint64_t seed) {
    Rng rng(seed);
    const int s1 = cfg_.patch_strides[0];
    const int c1 = cfg_.embed_dims[0], c2 = cfg_.embed_dims[1], c3 = cfg_.embed_dims[2];

    {
        RadialFilterParams fp = RadialFilterParams::init(64, 64);
        afdm_alpha_ = params_.add("afdm.alpha_raw", fp.alpha_raw);
        afdm_beta_ = params_.add("afdm.beta_raw", fp.beta_raw);
        afdm_r_ = params_.add("afdm.r_raw", fp.r_raw);
    }

    stages_[0].embed_w = params_.add("stage1.embed.w", init_weight(rng, s1 * s1, c1, 0.02));
    stages_[0].embed_b = params_.add("stage1.embed.b", Tensor::zeros({c1}), true);
    for (int i = 0; i < cfg_.stage_depths[0]; ++i) {
        stages_[0].blocks.push_back(add_block(rng, "stage1.block" + std::to_string(i), c1, false));
    }
    stages_[1].down_w = params_.add("stage2.down.w", init_weight(rng, 4 * c1, c2, 0.02));
    stages_[1].down_b = params_.add("stage2.down.b", Tensor::zeros({c2}), true);
    for (int i = 0; i < cfg_.stage_depths[1]; ++i) {
        stages_[1].blocks.push_back(add_block(rng, "stage2.block" + std::to_string(i), c2, false));
    }
    stages_[2].down_w = params_.add("stage3.down.w", init_weight(rng, 4 * c2, c3, 0.02));
    stages_[2].down_b = params_.add("stage3.down.b", Tensor::zeros({c3}), true);
    for (int i = 0; i < cfg_.stage_depths[2]; ++i) {
        stages_[2].blocks.push_back(add_block(rng, "stage3.block" + std::to_string(i), c3, false));
    }

    const bool on_stage1 = cfg_.ddg_input_stage == DdgInputStage::stage1;
    const int ddg_stride = on_stage1 ? cfg_.patch_strides[0] : cfg_.patch_strides[2];
    const int ddg_dim = on_stage1 ? c1 : c3;
    ddg_.embed_w = params_.add("ddg.embed.w", init_weight(rng, ddg_stride * ddg_stride, ddg_dim, 0.02));
    ddg_.embed_b = params_.add("ddg.embed.b", Tensor::zeros({ddg_dim}), true);
    for (int i = 0; i < cfg_.ddg_blocks; ++i) {
        ddg_.blocks.push_back(add_block(rng, "ddg.block" + std::to_string(i), ddg_dim, i == 0));
    }
    const int tokens_per_block = (cfg_.patch_strides[2] / ddg_stride) *
                                 (cfg_.patch_strides[2] / ddg_stride);
    ddg_.merge_w = params_.add("ddg.merge.w",
                               init_weight(rng, tokens_per_block * ddg_dim, cfg_.decoder_dim, 0.02));
    ddg_.merge_b = params_.add("ddg.merge.b", Tensor::zeros({cfg_.decoder_dim}), true);

    const int dd = cfg_.decoder_dim;
    const int psq = cfg_.patch_strides[2] * cfg_.patch_strides[2];
    decoder_.embed_w = params_.add("decoder.embed.w", init_weight(rng, c3, dd, 0.02));
    decoder_.embed_b = params_.add("decoder.embed.b", Tensor::zeros({dd}), true);
    decoder_.mask_token = params_.add("decoder.mask_token", init_weight(rng, 1, dd, 0.02), true);
    for (int i = 0; i < cfg_.decoder_depth; ++i) {
        decoder_.blocks.push_back(add_block(rng, "decoder.block" + std::to_string(i), dd, false));
    }
    decoder_.norm_g = params_.add("decoder.norm.g", Tensor::full({dd}, 1.0), true);
    decoder_.norm_b = params_.add("decoder.norm.b", Tensor::zeros({dd}), true);
    decoder_.head_w = params_.add("decoder.head.w", init_weight(rng, dd, psq, 0.02));
    decoder_.head_b = params_.add("decoder.head.b", Tensor::zeros({psq}), true);

    pyr_down_w_ = params_.add("pyramid.down.w", init_weight(rng, 4 * c3, c3, 0.02));
    pyr_down_b_ = params_.add("pyramid.down.b", Tensor::zeros({c3}), true);
}

RadialFilterParams DugiMae::afdm_params() const {
    RadialFilterParams p;
    p.alpha_raw = params_.at(afdm_alpha_);
    p.beta_raw = params_.at(afdm_beta_);
    p.r_raw = params_.at(afdm_r_);
    return p;
}

GrayImage pad_to_multiple(const GrayImage& img, int m) {
    if (m <= 0) throw PreconditionError("pad_to_multiple: modulus must be positive");
    if (img.height < 1 || img.width < 1) throw PreconditionError("pad_to_multiple: empty image");
    const int hp = (img.height + m - 1) / m * m;
    const int wp = (img.width + m - 1) / m * m;
    if (hp == img.height && wp == img.width) return img;
    GrayImage out = make_image(hp, wp);
    out.source_id = img.source_id;
    for (int r = 0; r < hp; ++r) {
        const int sr = std::min(r, img.height - 1);
        for (int c = 0; c < wp; ++c) {
            out.at(r, c) = img.at(sr, std::min(c, img.width - 1));
        }
    }
    return out;
}

MaskSelection DugiMae::make_mask(const GrayImage& crop, double lambda, MaskStrategy strategy,
                                 Rng* rng) const {
    const int s3 = cfg_.patch_strides[2];
    const GrayImage padded = pad_to_multiple(crop, 2 * s3);
    const TokenGrid grid = grid_from_image(padded, s3);
    if (strategy != MaskStrategy::entropy) return baseline_mask(grid, lambda, strategy, rng);

    std::vector<double> scores = entropy_map(grid);
    // Tokens that exist only because of padding sort below every real
    // token, so they are always masked first (and the loss skips them).
    double min_real = scores.front();
    for (double s : scores) min_real = std::min(min_real, s);
    for (int tr = 0; tr < grid.rows; ++tr) {
        for (int tc = 0; tc < grid.cols; ++tc) {
            if (tr * s3 >= crop.height || tc * s3 >= crop.width) {
                scores[static_cast<size_t>(tr) * grid.cols + tc] = min_real - 1.0;
            }
        }
    }
    return select_from_scores(scores, lambda);
}

namespace {
std::vector<int> expand_indices(const std::vector<int>& kept16, int gw16, int per_side) {
    const int gw = gw16 * per_side;
    std::vector<int> out;
    out.reserve(kept16.size() * static_cast<size_t>(per_side) * per_side);
    for (int b : kept16) {
        const int br = b / gw16, bc = b % gw16;
        for (int ir = 0; ir < per_side; ++ir) {
            for (int ic = 0; ic < per_side; ++ic) {
                out.push_back((br * per_side + ir) * gw + (bc * per_side + ic));
            }
        }
    }
    return out;
}
} // namespace

Tensor DugiMae::pos_table(int dim, int /*rows*/, int cols, const std::vector<int>& token_idx) const {
    std::vector<double> v(token_idx.size() * static_cast<size_t>(dim));
    for (size_t i = 0; i < token_idx.size(); ++i) {
        const int r = token_idx[i] / cols, c = token_idx[i] % cols;
        const std::vector<double> e = sincos_embed(dim, r, c);
        std::copy(e.begin(), e.end(), v.begin() + i * static_cast<size_t>(dim));
    }
    return Tensor::from_data({static_cast<int>(token_idx.size()), dim}, std::move(v));
}

Tensor DugiMae::run_mlp(const Tensor& x, const MlpIds& mlp) const {
    Tensor h = layer_norm(x, params_.at(mlp.norm_g), params_.at(mlp.norm_b));
    h = add_bias(matmul(h, params_.at(mlp.w1)), params_.at(mlp.b1));
    h = gelu(h);
    return add_bias(matmul(h, params_.at(mlp.w2)), params_.at(mlp.b2));
}

Tensor DugiMae::run_block(const Tensor& x, const BlockIds& blk, int heads) const {
    Tensor h = layer_norm(x, params_.at(blk.attn.norm_g), params_.at(blk.attn.norm_b));
    Tensor q = add_bias(matmul(h, params_.at(blk.attn.wq)), params_.at(blk.attn.bq));
    Tensor k = add_bias(matmul(h, params_.at(blk.attn.wk)), params_.at(blk.attn.bk));
    Tensor v = add_bias(matmul(h, params_.at(blk.attn.wv)), params_.at(blk.attn.bv));
    Tensor a = eq5_attention(q, k, Tensor(), v, Tensor(), heads);
    Tensor out = add(x, add_bias(matmul(a, params_.at(blk.attn.wo)), params_.at(blk.attn.bo)));
    return add(out, run_mlp(out, blk.mlp));
}

DugiMae::EncodeOut DugiMae::encode(const Tensor& padded_unit, const MaskSelection& sel,
                                   int h, int w) const {
    const int s1 = cfg_.patch_strides[0], s2 = cfg_.patch_strides[1], s3 = cfg_.patch_strides[2];
    const int gh16 = h / s3, gw16 = w / s3;
    if (sel.total != gh16 * gw16) {
        throw PreconditionError("encode: mask for " + std::to_string(sel.total) +
                                " tokens does not fit a " + std::to_string(gh16) + "x" +
                                std::to_string(gw16) + " grid");
    }
    EncodeOut enc;
    enc.kept16 = sel.keep_indices;
    enc.gh16 = gh16;
    enc.gw16 = gw16;
    const int nb = static_cast<int>(enc.kept16.size());

    // Stage 1: embed visible fine tokens, block-major so that each
    // kept coarse block contributes a contiguous run.
    const int per1 = s3 / s1;
    const std::vector<int> vis1 = expand_indices(enc.kept16, gw16, per1);
    Tensor x = gather_rows(extract_patches(padded_unit, s1), vis1);
    x = add_bias(matmul(x, params_.at(stages_[0].embed_w)), params_.at(stages_[0].embed_b));
    x = add(x, pos_table(cfg_.embed_dims[0], h / s1, w / s1, vis1));
    for (const BlockIds& blk : stages_[0].blocks) x = run_block(x, blk, cfg_.heads[0]);
    enc.s1 = x;

    // Down to stage 2: regroup each block's 4x4 fine tokens into 2x2
    // groups of 4 and fold the group into the channel dimension.
    std::vector<int> child;
    child.reserve(static_cast<size_t>(nb) * 16);
    for (int p = 0; p < nb; ++p) {
        const int base = p * 16;
        for (int a = 0; a < 2; ++a) {
            for (int c = 0; c < 2; ++c) {
                for (int da = 0; da < 2; ++da) {
                    for (int dc = 0; dc < 2; ++dc) {
                        child.push_back(base + (2 * a + da) * 4 + (2 * c + dc));
                    }
                }
            }
        }
    }
    Tensor x2 = reshape(gather_rows(x, child), {4 * nb, 4 * cfg_.embed_dims[0]});
    x2 = add_bias(matmul(x2, params_.at(stages_[1].down_w)), params_.at(stages_[1].down_b));
    const std::vector<int> vis2 = expand_indices(enc.kept16, gw16, s3 / s2);
    x2 = add(x2, pos_table(cfg_.embed_dims[1], h / s2, w / s2, vis2));
    for (const BlockIds& blk : stages_[1].blocks) x2 = run_block(x2, blk, cfg_.heads[1]);
    enc.s2 = x2;

    // Down to stage 3: the 2x2 children per block are already
    // contiguous, so this is a pure reshape.
    Tensor x3 = reshape(x2, {nb, 4 * cfg_.embed_dims[1]});
    x3 = add_bias(matmul(x3, params_.at(stages_[2].down_w)), params_.at(stages_[2].down_b));
    x3 = add(x3, pos_table(cfg_.embed_dims[2], gh16, gw16, enc.kept16));
    for (const BlockIds& blk : stages_[2].blocks) x3 = run_block(x3, blk, cfg_.heads[2]);
    enc.s3 = x3;
    return enc;
}

Tensor DugiMae::ddg_forward(const Tensor& spatial, const Tensor& f_freq,
                            std::vector<Tensor>* attn_out) const {
    if (spatial.rows() != f_freq.rows()) {
        throw PreconditionError("ddg: spatial has " + std::to_string(spatial.rows()) +
                                " tokens but frequency stream has " +
                                std::to_string(f_freq.rows()));
    }
    const bool on_stage1 = cfg_.ddg_input_stage == DdgInputStage::stage1;
    const int heads = on_stage1 ? cfg_.heads[0] : cfg_.heads[2];
    const Tensor s0 = spatial;
    Tensor x = spatial;
    for (size_t i = 0; i < ddg_.blocks.size(); ++i) {
        const BlockIds& blk = ddg_.blocks[i];
        const Tensor& ng = params_.at(blk.attn.norm_g);
        const Tensor& nb = params_.at(blk.attn.norm_b);
        Tensor a;
        if (i == 0) {
            Tensor hq = layer_norm(x, ng, nb);
            Tensor q = add_bias(matmul(hq, params_.at(blk.attn.wq)), params_.at(blk.attn.bq));
            Tensor ks = add_bias(matmul(hq, params_.at(blk.attn.wk)), params_.at(blk.attn.bk));
            Tensor vs = add_bias(matmul(hq, params_.at(blk.attn.wv)), params_.at(blk.attn.bv));
            Tensor kf = add_bias(matmul(f_freq, params_.at(blk.attn.wkf)), params_.at(blk.attn.bkf));
            Tensor vf = add_bias(matmul(f_freq, params_.at(blk.attn.wvf)), params_.at(blk.attn.bvf));
            a = eq5_attention(q, ks, kf, vs, vf, heads, attn_out);
        } else {
            // Later guidance blocks: keys and values come from the
            // spatial tokens plus the previous block's output, while
            // the query stays on the original spatial tokens.
            Tensor kv = add(s0, x);
            Tensor hq = layer_norm(s0, ng, nb);
            Tensor hkv = layer_norm(kv, ng, nb);
            Tensor q = add_bias(matmul(hq, params_.at(blk.attn.wq)), params_.at(blk.attn.bq));
            Tensor k = add_bias(matmul(hkv, params_.at(blk.attn.wk)), params_.at(blk.attn.bk));
            Tensor v = add_bias(matmul(hkv, params_.at(blk.attn.wv)), params_.at(blk.attn.bv));
            a = eq5_attention(q, k, Tensor(), v, Tensor(), heads, attn_out);
        }
        x = add(x, add_bias(matmul(a, params_.at(blk.attn.wo)), params_.at(blk.attn.bo)));
        x = add(x, run_mlp(x, blk.mlp));
    }
    return x;
}

Tensor DugiMae::ddg_branch(const EncodeOut& enc, const Tensor& freq_img) const {
    const bool on_stage1 = cfg_.ddg_input_stage == DdgInputStage::stage1;
    const int stride = on_stage1 ? cfg_.patch_strides[0] : cfg_.patch_strides[2];
    const int dim = on_stage1 ? cfg_.embed_dims[0] : cfg_.embed_dims[2];
    const int h = freq_img.shape()[0], w = freq_img.shape()[1];
    const std::vector<int> vis =
        expand_indices(enc.kept16, enc.gw16, cfg_.patch_strides[2] / stride);
    Tensor f = gather_rows(extract_patches(freq_img, stride), vis);
    f = add_bias(matmul(f, params_.at(ddg_.embed_w)), params_.at(ddg_.embed_b));
    f = add(f, pos_table(dim, h / stride, w / stride, vis));
    return ddg_forward(on_stage1 ? enc.s1 : enc.s3, f);
}

PretrainResult DugiMae::pretrain_forward(const GrayImage& crop, const MaskSelection& sel) const {
    const int s3 = cfg_.patch_strides[2];
    const GrayImage padded = pad_to_multiple(crop, 2 * s3);
    const int h = padded.height, w = padded.width;
    const int gh16 = h / s3, gw16 = w / s3;
    if (sel.total != gh16 * gw16) {
        throw PreconditionError("pretrain: mask does not match the padded token grid");
    }

    // Masked copy: the encoder and the frequency branch may only see
    // visible content, so masked blocks are zeroed before anything else.
    GrayImage masked = padded;
    for (int t = 0; t < sel.total; ++t) {
        if (sel.mask[static_cast<size_t>(t)]) continue;
        const int tr = t / gw16, tc = t % gw16;
        for (int pr = 0; pr < s3; ++pr) {
            for (int pc = 0; pc < s3; ++pc) {
                masked.at(tr * s3 + pr, tc * s3 + pc) = 0;
            }
        }
    }
    const Tensor x = image_tensor(masked, 1.0 / 255.0);

    const Tensor freq = afdm(x, afdm_params(), cfg_.afdm_variant);
    const EncodeOut enc = encode(x, sel, h, w);
    const Tensor guided = ddg_branch(enc, freq);

    Tensor dvis = add_bias(matmul(enc.s3, params_.at(decoder_.embed_w)),
                           params_.at(decoder_.embed_b));
    const int nb = static_cast<int>(enc.kept16.size());
    Tensor merged = cfg_.ddg_input_stage == DdgInputStage::stage1
        ? reshape(guided, {nb, guided.cols() * 16})
        : guided;
    merged = add_bias(matmul(merged, params_.at(ddg_.merge_w)), params_.at(ddg_.merge_b));
    dvis = add(dvis, merged);

    Tensor tokens = assemble_rows(dvis, params_.at(decoder_.mask_token), enc.kept16,
                                  gh16 * gw16);
    std::vector<int> all_idx(static_cast<size_t>(gh16 * gw16));
    for (size_t i = 0; i < all_idx.size(); ++i) all_idx[i] = static_cast<int>(i);
    tokens = add(tokens, pos_table(cfg_.decoder_dim, gh16, gw16, all_idx));
    for (const BlockIds& blk : decoder_.blocks) {
        tokens = run_block(tokens, blk, 4);
    }
    tokens = layer_norm(tokens, params_.at(decoder_.norm_g), params_.at(decoder_.norm_b));
    Tensor pred = add_bias(matmul(tokens, params_.at(decoder_.head_w)),
                           params_.at(decoder_.head_b));

    PretrainResult res;
    res.pred = pred;
    res.mask = sel;

    // Loss over masked tokens that contain real content (tokens made
    // entirely of padding are reconstructed but never scored).
    std::vector<int> loss_rows;
    for (int t = 0; t < sel.total; ++t) {
        if (sel.mask[static_cast<size_t>(t)]) continue;
        const int tr = t / gw16, tc = t % gw16;
        if (tr * s3 >= crop.height || tc * s3 >= crop.width) continue;
        loss_rows.push_back(t);
    }
    res.loss_tokens = static_cast<int>(loss_rows.size());
    if (loss_rows.empty()) {
        res.loss = Tensor::scalar(0.0);
        return res;
    }
    std::vector<double> tgt(loss_rows.size() * static_cast<size_t>(s3) * s3);
    for (size_t i = 0; i < loss_rows.size(); ++i) {
        const int tr = loss_rows[i] / gw16, tc = loss_rows[i] % gw16;
        for (int pr = 0; pr < s3; ++pr) {
            for (int pc = 0; pc < s3; ++pc) {
                tgt[i * static_cast<size_t>(s3) * s3 + static_cast<size_t>(pr) * s3 + pc] =
                    padded.at(tr * s3 + pr, tc * s3 + pc) / 255.0;
            }
        }
    }
    const Tensor target = Tensor::from_data({static_cast<int>(loss_rows.size()), s3 * s3},
                                            std::move(tgt));
    const Tensor diff = sub(gather_rows(pred, loss_rows), target);
    res.loss = mean(mul(diff, diff));
    return res;
}

FeaturePyramid DugiMae::feature_pyramid(const GrayImage& img) const {
    const int s3 = cfg_.patch_strides[2];
    const GrayImage padded = pad_to_multiple(img, 2 * s3);
    const int h = padded.height, w = padded.width;
    const int gh16 = h / s3, gw16 = w / s3;

    MaskSelection all = select_from_scores(std::vector<double>(static_cast<size_t>(gh16 * gw16), 0.0), 0.0);
    const Tensor x = image_tensor(padded, 1.0 / 255.0);
    const EncodeOut enc = encode(x, all, h, w);

    FeaturePyramid pyr;
    auto fill_level = [&](PyramidLevel& lvl, const Tensor& feats, int stride) {
        const int rows = h / stride, cols = w / stride, ch = feats.cols();
        lvl.rows = rows;
        lvl.cols = cols;
        lvl.channels = ch;
        lvl.values.assign(static_cast<size_t>(rows) * cols * ch, 0.0);
        const std::vector<int> vis = expand_indices(enc.kept16, gw16, s3 / stride);
        for (size_t i = 0; i < vis.size(); ++i) {
            std::memcpy(lvl.values.data() + static_cast<size_t>(vis[i]) * ch,
                        feats.data().data() + i * static_cast<size_t>(ch),
                        sizeof(double) * static_cast<size_t>(ch));
        }
    };
    fill_level(pyr.f1, enc.s1, cfg_.patch_strides[0]);
    fill_level(pyr.f2, enc.s2, cfg_.patch_strides[1]);
    fill_level(pyr.f3, enc.s3, cfg_.patch_strides[2]);

    // Fourth level: fold 2x2 coarse tokens into channels and project.
    const int gh32 = gh16 / 2, gw32 = gw16 / 2;
    std::vector<int> group;
    group.reserve(static_cast<size_t>(gh32) * gw32 * 4);
    for (int a = 0; a < gh32; ++a) {
        for (int c = 0; c < gw32; ++c) {
            group.push_back((2 * a) * gw16 + 2 * c);
            group.push_back((2 * a) * gw16 + 2 * c + 1);
            group.push_back((2 * a + 1) * gw16 + 2 * c);
            group.push_back((2 * a + 1) * gw16 + 2 * c + 1);
        }
    }
    Tensor f4 = reshape(gather_rows(enc.s3, group), {gh32 * gw32, 4 * cfg_.embed_dims[2]});
    f4 = add_bias(matmul(f4, params_.at(pyr_down_w_)), params_.at(pyr_down_b_));
    pyr.f4.rows = gh32;
    pyr.f4.cols = gw32;
    pyr.f4.channels = cfg_.embed_dims[2];
    pyr.f4.values = f4.data();
    return pyr;
}

GradCheckReport model_grad_check(int size, double tol, uint64_t seed, DdgInputStage stage) {
    if (size < 16) throw PreconditionError("grad check: size must be >= 16");
    ModelConfig cfg;
    cfg.stage_depths = {1, 1, 1};
    cfg.embed_dims = {4, 8, 16};
    cfg.heads = {1, 2, 2};
    cfg.decoder_depth = 1;
    cfg.decoder_dim = 16;
    cfg.mask_lambda = 0.5;
    cfg.ddg_blocks = 2;
    cfg.ddg_input_stage = stage;
    const DugiMae model(cfg, seed);

    // Procedural test frame: a bright blob over a ramp with a noisy
    // corner, so the entropy mask has real structure to rank.
    Rng rng(seed ^ 0xabcdefull);
    GrayImage img = make_image(size, size);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const double dr = r - size * 0.35, dc = c - size * 0.6;
            double v = 30.0 + 60.0 * c / size +
                       150.0 * std::exp(-(dr * dr + dc * dc) / (2.0 * size * 0.08 * size * 0.08));
            v += rng.normal(0.0, 3.0);
            img.at(r, c) = static_cast<uint8_t>(std::lround(std::min(255.0, std::max(0.0, v))));
        }
    }
    const MaskSelection sel = model.make_mask(img, cfg.mask_lambda, MaskStrategy::entropy);
    if (model.pretrain_forward(img, sel).loss_tokens == 0) {
        // with padding-only tokens demoted, tiny frames can end up with
        // every content token visible, leaving a constant loss
        throw PreconditionError(
            "grad check: no masked token carries content at this size, use a larger image");
    }
    auto f = [&]() { return model.pretrain_forward(img, sel).loss; };
    return grad_check(f, model.params().named(), 1e-5, tol);
}

namespace {
void write_block(std::ofstream& out, const std::string& name, const std::vector<int>& shape,
                 const double* data, size_t count) {
    out << name << "\nf64\n";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ' ';
        out << shape[i];
    }
    out << "\n";
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(count * sizeof(double)));
}

struct BlockReader {
    std::ifstream in;
    std::string path;

    bool next(std::string& name, std::vector<int>& shape, std::vector<double>& data) {
        if (!std::getline(in, name)) return false;
        if (name.empty()) return false;
        std::string dtype, shape_line;
        if (!std::getline(in, dtype) || !std::getline(in, shape_line)) {
            throw FormatError(path + ": truncated block header for " + name);
        }
        if (dtype != "f64") throw FormatError(path + ": unsupported dtype " + dtype);
        shape.clear();
        std::istringstream ss(shape_line);
        int d;
        size_t count = 1;
        while (ss >> d) {
            if (d <= 0) throw FormatError(path + ": bad shape for " + name);
            shape.push_back(d);
            count *= static_cast<size_t>(d);
        }
        if (shape.empty()) throw FormatError(path + ": empty shape for " + name);
        data.resize(count);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
            throw FormatError(path + ": truncated values for " + name);
        }
        return true;
    }
};
} // namespace

void DugiMae::save_checkpoint(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "DUGI1 " << cfg_.canonical() << "\n";
    for (int id = 0; id < params_.count(); ++id) {
        const Tensor& t = params_.at(id);
        write_block(out, params_.name_of(id), t.shape(), t.data().data(), t.size());
    }
    if (!out) throw IoError("write failure on " + path);
}

DugiMae DugiMae::load_checkpoint(const std::string& path) {
    BlockReader reader{std::ifstream(path, std::ios::binary), path};
    if (!reader.in) throw IoError("cannot open " + path);
    std::string header;
    if (!std::getline(reader.in, header) || header.rfind("DUGI1 ", 0) != 0) {
        throw FormatError(path + ": not a checkpoint (missing DUGI1 header)");
    }
    DugiMae model(ModelConfig::from_canonical(header.substr(6)), 0);

    std::vector<uint8_t> seen(static_cast<size_t>(model.params_.count()), 0);
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;
    while (reader.next(name, shape, data)) {
        const int id = model.params_.id_of(name);
        Tensor& t = model.params_.at(id);
        if (t.shape() != shape) {
            throw FormatError(path + ": shape mismatch for " + name + ": " +
                              shape_str(t.shape()) + " vs " + shape_str(shape));
        }
        t.mutable_data() = data;
        seen[static_cast<size_t>(id)] = 1;
    }
    for (int id = 0; id < model.params_.count(); ++id) {
        if (!seen[static_cast<size_t>(id)]) {
            throw FormatError(path + ": missing parameter " + model.params_.name_of(id));
        }
    }
    return model;
}

void save_pyramid(const FeaturePyramid& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    const PyramidLevel* levels[4] = {&p.f1, &p.f2, &p.f3, &p.f4};
    for (int i = 0; i < 4; ++i) {
        write_block(out, "F" + std::to_string(i + 1),
                    {levels[i]->rows, levels[i]->cols, levels[i]->channels},
                    levels[i]->values.data(), levels[i]->values.size());
    }
    if (!out) throw IoError("write failure on " + path);
}

FeaturePyramid load_pyramid(const std::string& path) {
    BlockReader reader{std::ifstream(path, std::ios::binary), path};
    if (!reader.in) throw IoError("cannot open " + path);
    FeaturePyramid p;
    PyramidLevel* levels[4] = {&p.f1, &p.f2, &p.f3, &p.f4};
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;
    int next = 0;
    while (reader.next(name, shape, data)) {
        if (next >= 4 || name != "F" + std::to_string(next + 1) || shape.size() != 3) {
            throw FormatError(path + ": unexpected block " + name);
        }
        levels[next]->rows = shape[0];
        levels[next]->cols = shape[1];
        levels[next]->channels = shape[2];
        levels[next]->values = data;
        ++next;
    }
    if (next != 4) throw FormatError(path + ": expected 4 pyramid levels, got " + std::to_string(next));
    return p;
}

} // namespace dugi
