// Command-line front end: init-model, synth-images, build-facets, optimize,
// render-grid and verify.

#include "featvis/error.hpp"
#include "featvis/image_io.hpp"
#include "featvis/model.hpp"
#include "featvis/runner.hpp"
#include "featvis/synthetic.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace featvis;

namespace {

// Applies a CLI flag on top of the config only when it was given explicitly.
template <class T>
void override_if(const CLI::Option* opt, T& target, const T& value) {
    if (opt->count() > 0) target = value;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Class-agnostic CNN feature visualization"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    // init-model
    auto* init = app.add_subcommand("init-model", "Write the seeded toy CNN as an .fvm file");
    std::uint64_t init_seed = 0;
    fs::path init_out;
    init->add_option("--seed", init_seed, "Weight seed");
    init->add_option("--out", init_out, "Output .fvm path")->required();

    // synth-images
    auto* synth = app.add_subcommand("synth-images", "Write Gaussian-blob test images as PNG");
    std::size_t synth_count = 30, synth_size = 32;
    std::uint64_t synth_seed = 0;
    fs::path synth_out;
    synth->add_option("--count", synth_count, "Number of images");
    synth->add_option("--size", synth_size, "Edge length in pixels");
    synth->add_option("--seed", synth_seed, "Noise and placement seed");
    synth->add_option("--out", synth_out, "Output directory")->required();

    // build-facets
    auto* build = app.add_subcommand("build-facets", "Cluster real-image activations into facets");
    BuildFacetsOptions bf;
    std::size_t single_member = 0;
    std::size_t res_w = 0, res_h = 0;
    build->add_option("--model", bf.model, "Model .fvm file")->required();
    build->add_option("--images", bf.images, "Directory of PNG images")->required();
    build->add_option("--layer", bf.layer, "Layer name")->required();
    build->add_option("--clusters", bf.facet.clusters, "Number of facets C");
    build->add_option("--neighbors", bf.facet.neighbors, "Members per facet N");
    build->add_option("--top-k", bf.facet.top_k, "Stored channel ranking length (0 = all)");
    build->add_option("--seed", bf.facet.seed, "Embedding and clustering seed");
    build->add_option("--perplexity", bf.facet.tsne.perplexity, "t-SNE perplexity");
    build->add_option("--tsne-iters", bf.facet.tsne.iterations, "t-SNE iterations");
    build->add_option("--pca-dims", bf.facet.pca_dims, "PCA dimensions before t-SNE");
    auto* single_opt = build->add_option("--single-member", single_member,
                                         "Build a single facet from the image at this index");
    build->add_option("--width", res_w, "Expected image width");
    build->add_option("--height", res_h, "Expected image height");
    build->add_flag("--resize", bf.resize, "Resample images to the expected resolution");
    build->add_option("--jobs", bf.threads, "Workers for activation collection");
    build->add_option("--out", bf.out, "Output directory")->required();

    // optimize
    auto* opt = app.add_subcommand("optimize", "Synthesize images for one or more facets");
    OptimizeOptions oo;
    fs::path config_file;
    OptimizationConfig flags;
    bool no_mask = false, fixed_robust = false, strict = false;
    opt->add_option("--facet", oo.facets, "Facet .fvf file (repeatable)")->required();
    opt->add_option("--model", oo.model, "Model .fvm file")->required();
    opt->add_option("--out", oo.out, "Run directory")->required();
    opt->add_option("--config", config_file, "Flat JSON config with dotted keys");
    opt->add_option("--jobs", oo.jobs, "Concurrent facet optimizations");
    auto* o_topk = opt->add_option("--top-k", flags.top_k, "Channels entering the objective");
    auto* o_iters = opt->add_option("--iters", flags.iterations, "Iterations T");
    auto* o_lr0 = opt->add_option("--lr-start", flags.lr.start);
    auto* o_lr1 = opt->add_option("--lr-end", flags.lr.end);
    auto* o_seed = opt->add_option("--seed", flags.seed);
    auto* o_b0 = opt->add_option("--blur-start", flags.blur_sigma.start);
    auto* o_b1 = opt->add_option("--blur-end", flags.blur_sigma.end);
    auto* o_bp = opt->add_option("--blur-period", flags.blur_period);
    auto* o_d0 = opt->add_option("--denoise-start", flags.denoise_weight.start);
    auto* o_d1 = opt->add_option("--denoise-end", flags.denoise_weight.end);
    auto* o_dp = opt->add_option("--denoise-period", flags.denoise_period);
    auto* o_m0 = opt->add_option("--mask-start", flags.mask_sigma.start, "Mask sigma as a fraction of min(H, W)");
    auto* o_m1 = opt->add_option("--mask-end", flags.mask_sigma.end);
    auto* o_l0 = opt->add_option("--lambda-start", flags.lambda.start);
    auto* o_l1 = opt->add_option("--lambda-end", flags.lambda.end);
    auto* o_mom = opt->add_option("--momentum", flags.momentum);
    auto* o_ck = opt->add_option("--checkpoint-every", flags.checkpoint_every);
    auto* o_nomask = opt->add_flag("--no-mask", no_mask, "Use an all-ones gradient mask");
    auto* o_fixed = opt->add_flag("--fixed-robust", fixed_robust, "Keep r = 1, b = 1 fixed");
    auto* o_strict = opt->add_flag("--strict-paper-ad", strict, "Use +1 in the general AD branch");

    // render-grid
    auto* grid = app.add_subcommand("render-grid", "Tile images into a grid PNG");
    RenderGridOptions rg;
    std::string order = "input";
    grid->add_option("--inputs", rg.inputs, "Glob pattern(s) or paths")->required();
    grid->add_option("--columns", rg.grid.columns, "Cells per row");
    grid->add_option("--cell-size", rg.grid.cell_size, "Cell edge in pixels (0 = native)");
    grid->add_option("--padding", rg.grid.padding, "Gap between cells");
    grid->add_option("--order", order, "input | facet | k | iteration");
    grid->add_flag("--labels", rg.grid.labels, "Draw a label strip under each cell");
    grid->add_flag("--resize", rg.grid.resize, "Resample mismatched cells");
    grid->add_option("--out", rg.out, "Output PNG")->required();

    // verify
    auto* verify = app.add_subcommand("verify", "Re-hash a run directory against its manifest");
    fs::path verify_dir;
    verify->add_option("dir", verify_dir, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*init) {
            ToyCnn::create(init_seed).save(init_out);
        } else if (*synth) {
            fs::create_directories(synth_out);
            const auto set = make_blob_images(synth_count, synth_size, synth_size, synth_seed);
            for (std::size_t i = 0; i < set.images.size(); ++i) {
                write_png(synth_out / fmt::format("img_{:03}_class{}.png", i, set.labels[i]), to_rgb8(set.images[i]));
            }
        } else if (*build) {
            if (single_opt->count() > 0) bf.single_member = single_member;
            if (res_w > 0 || res_h > 0) bf.resolution = Resolution{res_w, res_h};
            const auto result = cmd_build_facets(bf);
            for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
            for (const auto& f : result.facet_files) std::cout << f.string() << "\n";
        } else if (*opt) {
            OptimizationConfig cfg;
            if (!config_file.empty()) {
                std::ifstream in(config_file);
                if (!in) throw IoError("cannot open " + config_file.string());
                nlohmann::json j;
                try {
                    j = nlohmann::json::parse(in);
                } catch (const nlohmann::json::exception& e) {
                    throw ConfigError(config_file.string() + ": " + e.what());
                }
                cfg = OptimizationConfig::from_json(j);
            }
            override_if(o_topk, cfg.top_k, flags.top_k);
            override_if(o_iters, cfg.iterations, flags.iterations);
            override_if(o_lr0, cfg.lr.start, flags.lr.start);
            override_if(o_lr1, cfg.lr.end, flags.lr.end);
            override_if(o_seed, cfg.seed, flags.seed);
            override_if(o_b0, cfg.blur_sigma.start, flags.blur_sigma.start);
            override_if(o_b1, cfg.blur_sigma.end, flags.blur_sigma.end);
            override_if(o_bp, cfg.blur_period, flags.blur_period);
            override_if(o_d0, cfg.denoise_weight.start, flags.denoise_weight.start);
            override_if(o_d1, cfg.denoise_weight.end, flags.denoise_weight.end);
            override_if(o_dp, cfg.denoise_period, flags.denoise_period);
            override_if(o_m0, cfg.mask_sigma.start, flags.mask_sigma.start);
            override_if(o_m1, cfg.mask_sigma.end, flags.mask_sigma.end);
            override_if(o_l0, cfg.lambda.start, flags.lambda.start);
            override_if(o_l1, cfg.lambda.end, flags.lambda.end);
            override_if(o_mom, cfg.momentum, flags.momentum);
            override_if(o_ck, cfg.checkpoint_every, flags.checkpoint_every);
            override_if(o_nomask, cfg.use_mask, false);
            override_if(o_fixed, cfg.train_robust_params, false);
            override_if(o_strict, cfg.strict_paper_ad, true);
            oo.config = cfg;
            for (const auto& dir : cmd_optimize(oo)) std::cout << dir.string() << "\n";
        } else if (*grid) {
            rg.grid.order = parse_grid_order(order);
            std::cout << cmd_render_grid(rg).string() << "\n";
        } else if (*verify) {
            const auto problems = verify_manifest(verify_dir);
            for (const auto& p : problems) std::cerr << p << "\n";
            if (!problems.empty()) return 2;
            std::cout << "ok\n";
        }
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << " (term: " << e.term() << ")\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return 0;
}
