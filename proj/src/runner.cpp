#include "featvis/runner.hpp"

#include "featvis/error.hpp"
#include "featvis/hash.hpp"
#include "featvis/image_io.hpp"
#include "featvis/parallel.hpp"

#include <fmt/format.h>
#include <glob.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <regex>

namespace fs = std::filesystem;

namespace featvis {

namespace {

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

nlohmann::json file_entry(const fs::path& root, const fs::path& file) {
    return {{"path", fs::relative(file, root).generic_string()}, {"sha256", sha256_file(file)}};
}

nlohmann::json input_entry(const fs::path& file) { return {{"path", file.string()}, {"sha256", sha256_file(file)}}; }

std::string short_id(const std::string& seed_text) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(seed_text.data());
    return sha256_hex({bytes, seed_text.size()}).substr(0, 16);
}

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

} // namespace

std::size_t worker_cap(std::size_t requested) {
    std::size_t n = std::max<std::size_t>(requested, 1);
    if (const char* env = std::getenv("FEATVIS_THREADS")) {
        try {
            const long cap = std::stol(env);
            if (cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
        } catch (const std::exception&) {
            throw ConfigError(fmt::format("FEATVIS_THREADS must be a positive integer, got '{}'", env));
        }
    }
    return n;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const NumericError*>(&e)) return 3;
    if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
        dynamic_cast<const ResolutionError*>(&e) || dynamic_cast<const IoError*>(&e)) {
        return 2;
    }
    return 1;
}

IngestResult ingest_images(const fs::path& dir, std::size_t required, std::optional<Resolution> resolution,
                           bool resize) {
    if (!fs::is_directory(dir)) throw ValidationError(fmt::format("image directory '{}' does not exist", dir.string()));
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    IngestResult result;
    for (const auto& file : files) {
        Rgb8Image raw;
        try {
            raw = read_png(file);
        } catch (const IoError& e) {
            result.skipped.emplace_back(file, e.what());
            continue;
        }
        if (!resolution) resolution = Resolution{raw.width, raw.height};
        if (raw.width != resolution->width || raw.height != resolution->height) {
            if (!resize) {
                throw ValidationError(fmt::format("{} is {}x{}, expected {}x{} (pass --resize to resample)",
                                                  file.string(), raw.width, raw.height, resolution->width,
                                                  resolution->height));
            }
            raw = resize_bilinear(raw, resolution->width, resolution->height);
        }
        result.images.push_back({file, from_rgb8(raw), sha256_file(file)});
    }
    if (result.images.size() < required || result.images.empty()) {
        throw ValidationError(fmt::format("{} holds {} decodable images; at least {} are required", dir.string(),
                                          result.images.size(), std::max<std::size_t>(required, 1)));
    }
    return result;
}

BuildFacetsResult cmd_build_facets(const BuildFacetsOptions& opt) {
    const std::string started = utc_now();
    const ToyCnn model = ToyCnn::load(opt.model);
    const LayerRef layer = model.resolve(opt.layer);
    const std::size_t required =
        opt.single_member ? *opt.single_member + 1 : opt.facet.clusters * opt.facet.neighbors;
    IngestResult ingest = ingest_images(opt.images, required, opt.resolution, opt.resize);

    BuildFacetsResult result;
    for (const auto& [file, reason] : ingest.skipped) {
        result.warnings.push_back(fmt::format("skipped {}: {}", file.string(), reason));
    }
    std::vector<ImageTensor> images;
    for (const auto& img : ingest.images) images.push_back(img.image);
    const auto activations = collect_activations(model, images, layer, worker_cap(opt.threads));

    fs::create_directories(opt.out);
    std::vector<Facet> facets;
    std::string embedding_csv = "x,y,cluster,image_index\n";
    if (opt.single_member) {
        facets.push_back(single_member_facet(images, activations, *opt.single_member, layer, opt.facet.top_k));
    } else {
        FacetBuildResult built = build_facets(images, activations, layer, opt.facet);
        for (std::size_t i = 0; i < built.embedding.size(); ++i) {
            const auto& e = built.embedding[i];
            embedding_csv += fmt::format("{},{},{},{}\n", fmt_double(e.coords[0]), fmt_double(e.coords[1]),
                                         built.clusters.labels[i], e.image_index);
        }
        facets = std::move(built.facets);
    }

    nlohmann::json config = opt.facet.to_json();
    config["layer"] = layer.name;
    if (opt.single_member) config["single_member"] = *opt.single_member;

    std::vector<fs::path> outputs;
    for (std::size_t i = 0; i < facets.size(); ++i) {
        const fs::path path = opt.out / (opt.single_member ? fmt::format("facet_single_{:04}.fvf", *opt.single_member)
                                                           : fmt::format("facet_{:03}.fvf", i));
        save_facet(facets[i], path);
        result.facet_files.push_back(path);
        outputs.push_back(path);
    }
    if (!opt.single_member) {
        write_text(opt.out / "embeddings.csv", embedding_csv);
        outputs.push_back(opt.out / "embeddings.csv");
    }
    write_text(opt.out / "config.json", config.dump(2) + "\n");
    outputs.push_back(opt.out / "config.json");

    nlohmann::json manifest;
    manifest["command"] = "build-facets";
    manifest["version"] = kVersion;
    manifest["config"] = config;
    manifest["model"] = input_entry(opt.model);
    manifest["inputs"] = nlohmann::json::array();
    for (const auto& img : ingest.images) manifest["inputs"].push_back({{"path", img.path.string()}, {"sha256", img.sha256}});
    manifest["skipped"] = nlohmann::json::array();
    for (const auto& [file, reason] : ingest.skipped) manifest["skipped"].push_back({{"path", file.string()}, {"reason", reason}});
    manifest["outputs"] = nlohmann::json::array();
    for (const auto& o : outputs) manifest["outputs"].push_back(file_entry(opt.out, o));
    manifest["run_id"] = short_id(config.dump() + manifest["model"].dump() + manifest["inputs"].dump());
    manifest["timestamps"] = {{"started", started}, {"finished", utc_now()}};
    write_text(opt.out / "manifest.json", manifest.dump(2) + "\n");
    return result;
}

std::string loss_csv_header() { return "iter,dm,ad,mdist,l1_prev,lambda,lr,sigma,r,b,total\n"; }

std::string loss_csv_row(const IterationRecord& r) {
    return fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", r.iteration, fmt_double(r.loss.dm), fmt_double(r.loss.ad),
                       fmt_double(r.loss.mdist), fmt_double(r.loss.l1_prev), fmt_double(r.loss.lambda),
                       fmt_double(r.lr), fmt_double(r.blur_sigma), fmt_double(r.r), fmt_double(r.b),
                       fmt_double(r.loss.total));
}

namespace {

void run_single(const FeatureExtractor& model, const fs::path& model_path, const fs::path& facet_path,
                const fs::path& dir, const OptimizationConfig& config) {
    const std::string started = utc_now();
    const Facet facet = load_facet(facet_path);
    fs::create_directories(dir / "checkpoints");
    const nlohmann::json config_json = config.to_json();
    write_text(dir / "config.json", config_json.dump(2) + "\n");

    std::ofstream csv(dir / "loss_history.csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw IoError("cannot open " + (dir / "loss_history.csv").string());
    csv << loss_csv_header();
    std::vector<fs::path> outputs{dir / "config.json", dir / "loss_history.csv"};

    nlohmann::json manifest;
    manifest["command"] = "optimize";
    manifest["version"] = kVersion;
    manifest["config"] = config_json;
    manifest["model"] = input_entry(model_path);
    manifest["facet"] = input_entry(facet_path);
    manifest["facet"]["cluster"] = facet.cluster;
    manifest["facet"]["layer"] = facet.layer.name;
    manifest["run_id"] = short_id(config_json.dump() + manifest["model"].dump() + manifest["facet"].dump());

    auto finish = [&](const std::string& status) {
        csv.flush();
        manifest["status"] = status;
        manifest["outputs"] = nlohmann::json::array();
        for (const auto& o : outputs) manifest["outputs"].push_back(file_entry(dir, o));
        manifest["timestamps"] = {{"started", started}, {"finished", utc_now()}};
        write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    };

    RunTrace trace;
    try {
        trace = optimize(model, facet, config, [&](const IterationRecord& rec, const ImageTensor& image, bool checkpoint) {
            csv << loss_csv_row(rec);
            if (checkpoint) {
                const fs::path p = dir / "checkpoints" / fmt::format("iter_{:06}.png", rec.iteration);
                write_png(p, to_rgb8(image));
                outputs.push_back(p);
            }
        });
    } catch (const NumericError& e) {
        manifest["error"] = {{"message", e.what()}, {"iteration", e.iteration()}, {"term", e.term()}};
        finish("aborted");
        throw;
    }
    manifest["top_k"] = trace.top_k;
    write_png(dir / "final.png", to_rgb8(trace.final_image));
    outputs.push_back(dir / "final.png");
    finish("completed");
}

} // namespace

std::vector<fs::path> cmd_optimize(const OptimizeOptions& opt) {
    if (opt.facets.empty()) throw ValidationError("optimize needs at least one --facet");
    opt.config.validate();
    const ToyCnn model = ToyCnn::load(opt.model);
    std::vector<fs::path> dirs;
    for (const auto& f : opt.facets) {
        if (!fs::exists(f)) throw ValidationError(fmt::format("facet file '{}' does not exist", f.string()));
        dirs.push_back(opt.facets.size() == 1 ? opt.out : opt.out / f.stem());
    }
    parallel_for(opt.facets.size(), worker_cap(opt.jobs),
                 [&](std::size_t i) { run_single(model, opt.model, opt.facets[i], dirs[i], opt.config); });
    return dirs;
}

namespace {

struct CellSource {
    fs::path path;
    std::string label;
    std::string facet_key;
    std::size_t top_k = 0;
    long iteration = -1;
};

CellSource describe(const fs::path& path) {
    CellSource s{path, path.stem().string(), path.string(), 0, -1};
    static const std::regex iter_re(R"(iter_(\d+))");
    std::smatch m;
    const std::string stem = path.stem().string();
    if (std::regex_search(stem, m, iter_re)) s.iteration = std::stol(m[1]);
    for (const fs::path& dir : {path.parent_path(), path.parent_path().parent_path()}) {
        const fs::path manifest_path = dir / "manifest.json";
        if (dir.empty() || !fs::exists(manifest_path)) continue;
        try {
            const auto manifest = read_json(manifest_path);
            if (manifest.value("command", "") != "optimize") continue;
            const auto& facet = manifest.at("facet");
            s.facet_key = facet.value("path", path.string());
            s.top_k = manifest.contains("top_k") ? manifest["top_k"].size() : 0;
            const std::size_t cluster = facet.value("cluster", std::size_t{0});
            const std::string layer = facet.value("layer", "");
            s.label = fmt::format("f{} k{} {}", cluster, s.top_k, layer);
            if (s.iteration < 0 && manifest.contains("config")) s.iteration = manifest["config"].value("iters", 0L);
            if (s.iteration >= 0 && path.parent_path().filename() == "checkpoints") s.label += fmt::format(" i{}", s.iteration);
        } catch (const std::exception&) {
            // A malformed manifest only costs the label.
        }
        break;
    }
    return s;
}

std::vector<fs::path> expand(const std::string& pattern) {
    glob_t g{};
    std::vector<fs::path> out;
    const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
    if (rc == 0) {
        for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    }
    globfree(&g);
    if (rc != 0 && rc != GLOB_NOMATCH) throw IoError(fmt::format("glob '{}' failed", pattern));
    return out;
}

} // namespace

fs::path cmd_render_grid(const RenderGridOptions& opt) {
    opt.grid.validate();
    std::vector<CellSource> sources;
    for (const auto& pattern : opt.inputs) {
        for (const auto& p : expand(pattern)) sources.push_back(describe(p));
    }
    if (sources.empty()) throw ValidationError("render-grid: no input images matched");
    switch (opt.grid.order) {
        case GridOrder::input: break;
        case GridOrder::facet:
            std::stable_sort(sources.begin(), sources.end(), [](const auto& a, const auto& b) {
                return std::tie(a.facet_key, a.top_k) < std::tie(b.facet_key, b.top_k);
            });
            break;
        case GridOrder::top_k:
            std::stable_sort(sources.begin(), sources.end(), [](const auto& a, const auto& b) {
                return std::tie(a.top_k, a.facet_key) < std::tie(b.top_k, b.facet_key);
            });
            break;
        case GridOrder::iteration:
            std::stable_sort(sources.begin(), sources.end(),
                             [](const auto& a, const auto& b) { return a.iteration < b.iteration; });
            break;
    }
    std::vector<GridCell> cells;
    for (const auto& s : sources) cells.push_back({read_png(s.path), s.label});
    const Rgb8Image grid = render_grid(cells, opt.grid);
    if (opt.out.has_parent_path()) fs::create_directories(opt.out.parent_path());
    write_png(opt.out, grid);
    return opt.out;
}

std::vector<std::string> verify_manifest(const fs::path& run_dir) {
    const auto manifest = read_json(run_dir / "manifest.json");
    std::vector<std::string> problems;
    auto check = [&](const fs::path& path, const std::string& expected) {
        if (!fs::exists(path)) {
            problems.push_back(fmt::format("missing file {}", path.string()));
        } else if (sha256_file(path) != expected) {
            problems.push_back(fmt::format("hash mismatch for {}", path.string()));
        }
    };
    for (const auto& e : manifest.value("outputs", nlohmann::json::array())) {
        check(run_dir / e.at("path").get<std::string>(), e.at("sha256"));
    }
    for (const char* key : {"model", "facet"}) {
        if (manifest.contains(key)) check(manifest[key].at("path").get<std::string>(), manifest[key].at("sha256"));
    }
    for (const auto& e : manifest.value("inputs", nlohmann::json::array())) {
        check(e.at("path").get<std::string>(), e.at("sha256"));
    }
    return problems;
}

nlohmann::json manifest_without_timestamps(const fs::path& run_dir) {
    auto manifest = read_json(run_dir / "manifest.json");
    manifest.erase("timestamps");
    return manifest;
}

} // namespace featvis
