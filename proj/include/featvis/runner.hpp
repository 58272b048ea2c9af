#pragma once

#include "featvis/facet.hpp"
#include "featvis/grid.hpp"
#include "featvis/optim.hpp"

#include <nlohmann/json.hpp>

#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace featvis {

inline constexpr const char* kVersion = "0.1.0";

struct IngestedImage {
    std::filesystem::path path;
    ImageTensor image;
    std::string sha256;
};

struct IngestResult {
    std::vector<IngestedImage> images;
    /// (file, reason) for every file that could not be decoded.
    std::vector<std::pair<std::filesystem::path, std::string>> skipped;
};

struct Resolution {
    std::size_t width = 0;
    std::size_t height = 0;
};

/// Decodes every regular file of `dir` in lexicographic order. Undecodable
/// files are skipped and reported. All images must match `resolution` (or
/// the first decoded image when unset) unless `resize` is set.
IngestResult ingest_images(const std::filesystem::path& dir, std::size_t required,
                           std::optional<Resolution> resolution = std::nullopt, bool resize = false);

struct BuildFacetsOptions {
    std::filesystem::path model;
    std::filesystem::path images;
    std::filesystem::path out;
    std::string layer;
    FacetBuildConfig facet;
    /// Build one facet from this image alone instead of clustering.
    std::optional<std::size_t> single_member;
    std::optional<Resolution> resolution;
    bool resize = false;
    std::size_t threads = 1;
};

struct BuildFacetsResult {
    std::vector<std::filesystem::path> facet_files;
    std::vector<std::string> warnings;
};

/// Writes facet_NNN.fvf files, embeddings.csv, config.json and manifest.json into `out`.
BuildFacetsResult cmd_build_facets(const BuildFacetsOptions& options);

struct OptimizeOptions {
    std::vector<std::filesystem::path> facets;
    std::filesystem::path model;
    std::filesystem::path out;
    OptimizationConfig config;
    std::size_t jobs = 1;
};

/// One run directory per facet: `out` itself for a single facet, otherwise
/// `out/<facet stem>`. Returns the run directories.
std::vector<std::filesystem::path> cmd_optimize(const OptimizeOptions& options);

struct RenderGridOptions {
    /// Glob patterns or plain paths; each pattern expands in lexicographic order.
    std::vector<std::string> inputs;
    std::filesystem::path out;
    GridSpec grid;
};

std::filesystem::path cmd_render_grid(const RenderGridOptions& options);

/// Returns one message per manifest entry whose file is missing or whose
/// hash no longer matches. Empty means the run directory is intact.
std::vector<std::string> verify_manifest(const std::filesystem::path& run_dir);

/// Manifest contents with timestamps removed, for reproducibility comparisons.
nlohmann::json manifest_without_timestamps(const std::filesystem::path& run_dir);

/// Caps a requested worker count by FEATVIS_THREADS when set.
std::size_t worker_cap(std::size_t requested);

/// 0 success, 2 validation/config error, 3 numeric abort, 1 anything else.
int exit_code_for(const std::exception& e);

std::string loss_csv_header();
std::string loss_csv_row(const IterationRecord& rec);

} // namespace featvis
