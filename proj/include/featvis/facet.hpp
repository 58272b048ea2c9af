#pragma once

#include "featvis/embedding.hpp"
#include "featvis/kmeans.hpp"
#include "featvis/model.hpp"
#include "featvis/objective.hpp"
#include "featvis/tensor.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <vector>

namespace featvis {

/// Stability floor on embedding distances: score = 1 / max(distance, gamma).
constexpr double kDistanceFloor = 1e-5;

struct FacetWeights {
    std::vector<std::size_t> member_indices;
    std::vector<double> weights;
};

struct Facet {
    ImageTensor init_image;
    ActivationTensor target;
    FacetWeights weights;
    ChannelList top_k;
    LayerRef layer;

    // Provenance, echoed into the .fvf header.
    std::size_t cluster = 0;
    Point2 center{};
    std::vector<double> member_distances;
    nlohmann::json config = nlohmann::json::object();
};

/// Spatial mean of every channel.
Vector pool_activation(const ActivationTensor& a);

/// Indices from `candidates` sorted by ascending distance to `center`
/// (ties: lower index first), truncated to `count`.
std::vector<std::size_t> nearest_members(std::span<const Point2> points, std::span<const std::size_t> candidates,
                                         const Point2& center, std::size_t count);

/// Scores 1 / max(d, gamma) for each distance.
std::vector<double> distance_scores(std::span<const double> distances);

/// Softmax with the maximum subtracted before exponentiation.
std::vector<double> softmax(std::span<const double> scores);

/// softmax(distance_scores(distances)).
std::vector<double> facet_weights(std::span<const double> distances);

/// The k channels with the largest spatial mean, descending, ties by lower index.
ChannelList top_k_channels(const ActivationTensor& target, std::size_t k);

/// Weighted combination of member images and activations.
Facet build_facet(std::span<const ImageTensor> images, std::span<const ActivationTensor> activations,
                  const FacetWeights& weights, const LayerRef& layer, std::size_t k);

struct FacetBuildConfig {
    std::size_t clusters = 3;
    std::size_t neighbors = 10;
    /// 0 keeps every channel ranked.
    std::size_t top_k = 0;
    std::size_t pca_dims = 50;
    TsneOptions tsne{};
    KMeansOptions kmeans{};
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
};

struct FacetBuildResult {
    std::vector<Facet> facets;
    std::vector<EmbeddingPoint> embedding;
    ClusterAssignment clusters;
};

/// Pool -> PCA -> t-SNE -> k-means -> nearest members -> weighted facets.
FacetBuildResult build_facets(std::span<const ImageTensor> images, std::span<const ActivationTensor> activations,
                              const LayerRef& layer, const FacetBuildConfig& config);

/// Facet made of a single image with weight 1.
Facet single_member_facet(std::span<const ImageTensor> images, std::span<const ActivationTensor> activations,
                          std::size_t index, const LayerRef& layer, std::size_t k);

/// Forward every image to `layer`, using up to `threads` workers.
std::vector<ActivationTensor> collect_activations(const FeatureExtractor& model, std::span<const ImageTensor> images,
                                                  const LayerRef& layer, std::size_t threads = 1);

/// `.fvf`: JSON header line, then float32 init image followed by target.
void save_facet(const Facet& facet, const std::filesystem::path& path);
Facet load_facet(const std::filesystem::path& path);

} // namespace featvis
