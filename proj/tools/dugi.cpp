#include "dugi/common.hpp"
#include "dugi/frequency.hpp"
#include "dugi/image.hpp"
#include "dugi/masking.hpp"
#include "dugi/model.hpp"
#include "dugi/synth.hpp"
#include "dugi/training.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace dugi;

namespace {

struct CurateArgs {
    std::string input, scenes, out, stats;
    double threshold = 0.85;
    int border_threshold = 0;
    uint64_t seed = 0;
};

int run_curate(const CurateArgs& a) {
    std::vector<std::pair<std::string, std::string>> listing;   // path, scene
    if (!a.scenes.empty()) {
        std::ifstream in(a.scenes);
        if (!in) throw IoError("cannot open scenes manifest " + a.scenes);
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            const size_t tab = line.find('\t');
            if (tab == std::string::npos) {
                listing.emplace_back(line, line);   // no scene column: each file its own scene
            } else {
                listing.emplace_back(line.substr(0, tab), line.substr(tab + 1));
            }
        }
    } else {
        std::vector<std::string> found;
        if (!fs::is_directory(a.input)) throw IoError("input is not a directory: " + a.input);
        for (const auto& e : fs::directory_iterator(a.input)) {
            if (!e.is_regular_file()) continue;
            const std::string ext = e.path().extension().string();
            if (ext == ".pgm" || ext == ".png") found.push_back(e.path().filename().string());
        }
        std::sort(found.begin(), found.end());
        for (const std::string& f : found) listing.emplace_back(f, "all");
    }
    if (listing.empty()) throw IoError("no images found under " + a.input);

    std::vector<CorpusEntry> entries(listing.size());
    std::vector<std::pair<int, int>> dims(listing.size());   // cropped (w, h)
    for (size_t i = 0; i < listing.size(); ++i) {
        fs::path p(listing[i].first);
        const std::string full = p.is_absolute() ? p.string() : (fs::path(a.input) / p).string();
        const GrayImage img = load_gray(full);
        const GrayImage cropped = crop_black_borders(img, a.border_threshold);
        entries[i].path = listing[i].first;
        entries[i].scene_group = listing[i].second;
        entries[i].feature = dedup_feature(cropped);
        dims[i] = {cropped.width, cropped.height};
    }
    dedup_scan(entries, a.threshold, a.seed);

    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw IoError("cannot write " + a.out);
    out << "# seed=" << a.seed << "\n";
    int kept = 0;
    for (const CorpusEntry& e : entries) {
        char sim[40];
        std::snprintf(sim, sizeof(sim), "%.17g", e.max_sim);
        out << e.path << "\t" << e.scene_group << "\t" << (e.kept ? 1 : 0) << "\t" << sim << "\n";
        kept += e.kept ? 1 : 0;
    }
    if (!out) throw IoError("write failure on " + a.out);

    if (!a.stats.empty()) {
        ResolutionStats stats;
        for (const auto& [w, h] : dims) {
            ++stats.counts[{w, h}];
            ++stats.total;
        }
        write_resolution_csv(stats, a.stats);
    }
    std::cerr << "curate: " << kept << " kept, " << (entries.size() - static_cast<size_t>(kept))
              << " excluded of " << entries.size() << "\n";
    return 0;
}

struct PretrainArgs {
    std::string config, out_dir, strategy;
    uint64_t seed = 0;
    bool seed_set = false;
};

int run_pretrain(const PretrainArgs& a) {
    ModelConfig mc;
    TrainConfig tc;
    apply_config_file(a.config, mc, tc);
    if (!a.out_dir.empty()) tc.out_dir = a.out_dir;
    if (a.seed_set) tc.seed = a.seed;
    if (!a.strategy.empty()) tc.strategy = mask_strategy_from_string(a.strategy);
    if (tc.corpus.empty()) throw ConfigError("missing required key 'corpus'");
    // Corpus paths in the config file are taken relative to it.
    fs::path corpus(tc.corpus);
    if (!corpus.is_absolute()) tc.corpus = (fs::path(a.config).parent_path() / corpus).string();

    const TrainResult res = train(mc, tc);
    std::cerr << "pretrain: " << res.steps << " steps, final loss " << res.losses.back()
              << ", metrics " << res.metrics_csv << ", checkpoint " << res.final_checkpoint;
    if (res.skipped_images > 0) std::cerr << ", skipped " << res.skipped_images << " images";
    std::cerr << "\n";
    return 0;
}

int run_mask_viz(const std::string& image, double lambda, const std::string& prefix,
                 const std::string& strategy, uint64_t seed) {
    const GrayImage img = load_gray(image);
    const GrayImage padded = pad_to_multiple(img, 16);
    const TokenGrid grid = grid_from_image(padded, 16);
    const std::vector<double> entropies = entropy_map(grid);
    Rng rng(seed);
    MaskSelection sel;
    const MaskStrategy strat = mask_strategy_from_string(strategy);
    if (strat == MaskStrategy::entropy) {
        sel = select_from_scores(entropies, lambda);
    } else {
        sel = baseline_mask(grid, lambda, strat, &rng);
    }
    write_entropy_pgm(entropies, grid.rows, grid.cols, grid.patch, prefix + "_entropy.pgm");
    write_mask_pgm(padded, sel, grid.rows, grid.cols, grid.patch, prefix + "_mask.pgm");
    std::cerr << "mask-viz: " << sel.keep_indices.size() << "/" << sel.total
              << " tokens visible\n";
    return 0;
}

int run_afdm_apply(const std::string& image, const std::string& out, double alpha, double beta,
                   double radius, const std::string& variant) {
    const GrayImage img = load_gray(image);
    FilterSpec spec;
    spec.alpha = alpha;
    spec.beta = beta;
    spec.radius = radius > 0.0 ? radius : std::min(img.height, img.width) / 8.0;
    spec.variant = filter_variant_from_string(variant);
    const Tensor filtered = afdm_apply(image_tensor(img), spec);
    GrayImage result = make_image(img.height, img.width);
    result.source_id = img.source_id;
    const std::vector<double>& v = filtered.data();
    for (size_t i = 0; i < v.size(); ++i) {
        result.pixels[i] = static_cast<uint8_t>(std::lround(std::clamp(v[i], 0.0, 255.0)));
    }
    save_pgm(result, out);
    std::cerr << "afdm-apply: alpha=" << spec.alpha << " beta=" << spec.beta
              << " r=" << spec.radius << " variant=" << to_string(spec.variant) << "\n";
    return 0;
}

int run_features(const std::string& ckpt, const std::string& image, const std::string& out) {
    const DugiMae model = DugiMae::load_checkpoint(ckpt);
    const GrayImage img = load_gray(image);
    const FeaturePyramid pyr = model.feature_pyramid(img);
    save_pyramid(pyr, out);
    const PyramidLevel* levels[4] = {&pyr.f1, &pyr.f2, &pyr.f3, &pyr.f4};
    std::cerr << "features:";
    for (int i = 0; i < 4; ++i) {
        std::cerr << " F" << (i + 1) << "=" << levels[i]->rows << "x" << levels[i]->cols << "x"
                  << levels[i]->channels;
    }
    std::cerr << "\n";
    return 0;
}

int run_grad_check(int size, double tol, uint64_t seed) {
    const GradCheckReport rep = model_grad_check(size, tol, seed);
    std::cout << (rep.pass ? "PASS" : "FAIL") << " max_rel_err=" << rep.max_rel_err << " worst="
              << (rep.worst.empty() ? "-" : rep.worst) << " elements=" << rep.elements << "\n";
    return rep.pass ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Infrared self-supervised pretraining toolkit"};
    app.require_subcommand(1);

    CurateArgs cur;
    CLI::App* curate = app.add_subcommand(
        "curate", "Deduplicate a corpus, crop zero borders, and report resolutions");
    curate->add_option("--input", cur.input, "Image directory")->required();
    curate->add_option("--scenes", cur.scenes,
                       "Scene manifest (path<TAB>scene per line); default: every image in the "
                       "directory forms one scene");
    curate->add_option("--threshold", cur.threshold, "Cosine similarity exclusion threshold")
        ->default_val(0.85);
    curate->add_option("--out", cur.out, "Output manifest path")->required();
    curate->add_option("--stats", cur.stats, "Resolution CSV path");
    curate->add_option("--border-threshold", cur.border_threshold,
                       "Pixels at or below this level count as border")
        ->default_val(0);
    curate->add_option("--seed", cur.seed, "Anchor selection seed")->default_val(0);

    PretrainArgs pre;
    CLI::App* pretrain = app.add_subcommand("pretrain", "Run masked-autoencoder pretraining");
    pretrain->add_option("--config", pre.config, "Flat key = value config file")->required();
    pretrain->add_option("--out", pre.out_dir, "Output directory (overrides config)");
    CLI::Option* seed_opt =
        pretrain->add_option("--seed", pre.seed, "Training seed (overrides config)");
    pretrain->add_option("--mask-strategy", pre.strategy,
                         "entropy, random, or gray_value (overrides config)");

    std::string mv_image, mv_prefix, mv_strategy = "entropy";
    double mv_lambda = 0.75;
    uint64_t mv_seed = 0;
    CLI::App* maskviz =
        app.add_subcommand("mask-viz", "Write entropy map and mask visualization PGMs");
    maskviz->add_option("--image", mv_image, "Input image")->required();
    maskviz->add_option("--lambda", mv_lambda, "Mask ratio")->default_val(0.75);
    maskviz->add_option("--out", mv_prefix, "Output prefix")->required();
    maskviz->add_option("--strategy", mv_strategy, "entropy, random, or gray_value");
    maskviz->add_option("--seed", mv_seed, "Seed for the random strategy");

    std::string af_image, af_out, af_variant = "notch";
    double af_alpha = 0.5, af_beta = 1.0, af_radius = -1.0;
    CLI::App* afdmapply =
        app.add_subcommand("afdm-apply", "Apply the radial frequency filter to an image");
    afdmapply->add_option("--image", af_image, "Input image")->required();
    afdmapply->add_option("--out", af_out, "Output PGM")->required();
    afdmapply->add_option("--alpha", af_alpha, "Center gain in [0,1)")->default_val(0.5);
    afdmapply->add_option("--beta", af_beta, "Falloff sharpness (> 0)")->default_val(1.0);
    afdmapply->add_option("--radius", af_radius, "Radial scale; default min(h,w)/8");
    afdmapply->add_option("--variant", af_variant, "notch or literal");

    std::string ft_ckpt, ft_image, ft_out;
    CLI::App* features = app.add_subcommand("features", "Export the multi-scale feature pyramid");
    features->add_option("--ckpt", ft_ckpt, "Checkpoint path")->required();
    features->add_option("--image", ft_image, "Input image")->required();
    features->add_option("--out", ft_out, "Output pyramid file")->required();

    int gc_size = 32;
    double gc_tol = 1e-4;
    uint64_t gc_seed = 3;
    CLI::App* gradcheck = app.add_subcommand(
        "grad-check", "Finite-difference check of all gradients on a small config");
    gradcheck->add_option("--size", gc_size, "Toy image side")->default_val(32);
    gradcheck->add_option("--tol", gc_tol, "Relative tolerance")->default_val(1e-4);
    gradcheck->add_option("--seed", gc_seed, "Seed")->default_val(3);

    std::string sy_out;
    int sy_n = 64, sy_size = 64;
    uint64_t sy_seed = 7;
    CLI::App* synthcmd = app.add_subcommand("synth", "Generate a synthetic training corpus");
    synthcmd->add_option("--out", sy_out, "Output directory")->required();
    synthcmd->add_option("--n", sy_n, "Image count")->default_val(64);
    synthcmd->add_option("--size", sy_size, "Image side")->default_val(64);
    synthcmd->add_option("--seed", sy_seed, "Seed")->default_val(7);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);   // help text on stdout, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (curate->parsed()) return run_curate(cur);
        if (pretrain->parsed()) {
            pre.seed_set = seed_opt->count() > 0;
            return run_pretrain(pre);
        }
        if (maskviz->parsed()) {
            return run_mask_viz(mv_image, mv_lambda, mv_prefix, mv_strategy, mv_seed);
        }
        if (afdmapply->parsed()) {
            return run_afdm_apply(af_image, af_out, af_alpha, af_beta, af_radius, af_variant);
        }
        if (features->parsed()) return run_features(ft_ckpt, ft_image, ft_out);
        if (gradcheck->parsed()) return run_grad_check(gc_size, gc_tol, gc_seed);
        if (synthcmd->parsed()) {
            const std::string list = synth_training_corpus(sy_out, sy_n, sy_size, sy_seed);
            std::cerr << "synth: wrote " << sy_n << " images, listing " << list << "\n";
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
