#include "featvis/facet.hpp"

#include "featvis/container.hpp"
#include "featvis/error.hpp"
#include "featvis/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

namespace featvis {

Vector pool_activation(const ActivationTensor& a) {
    require_finite(a.data, "activation");
    Vector pooled(a.data.channels(), 0.0);
    const double plane = static_cast<double>(a.data.shape().plane());
    for (std::size_t c = 0; c < pooled.size(); ++c) {
        const auto ch = a.data.channel(c);
        pooled[c] = std::accumulate(ch.begin(), ch.end(), 0.0) / plane;
    }
    return pooled;
}

std::vector<std::size_t> nearest_members(std::span<const Point2> points, std::span<const std::size_t> candidates,
                                         const Point2& center, std::size_t count) {
    std::vector<std::size_t> order(candidates.begin(), candidates.end());
    std::sort(order.begin(), order.end());
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return squared_distance(points[a], center) < squared_distance(points[b], center);
    });
    order.resize(std::min(count, order.size()));
    return order;
}

std::vector<double> distance_scores(std::span<const double> distances) {
    std::vector<double> scores;
    scores.reserve(distances.size());
    for (double d : distances) {
        if (!(d >= 0.0)) throw ValidationError(fmt::format("distance must be >= 0, got {}", d));
        scores.push_back(1.0 / std::max(d, kDistanceFloor));
    }
    return scores;
}

std::vector<double> softmax(std::span<const double> scores) {
    if (scores.empty()) return {};
    const double top = *std::max_element(scores.begin(), scores.end());
    std::vector<double> out;
    out.reserve(scores.size());
    double sum = 0.0;
    for (double s : scores) {
        out.push_back(std::exp(s - top));
        sum += out.back();
    }
    for (double& v : out) v /= sum;
    return out;
}

std::vector<double> facet_weights(std::span<const double> distances) {
    const auto scores = distance_scores(distances);
    return softmax(scores);
}

ChannelList top_k_channels(const ActivationTensor& target, std::size_t k) {
    const std::size_t channels = target.data.channels();
    if (k == 0 || k > channels) throw ValidationError(fmt::format("top-k must be in [1, {}], got {}", channels, k));
    const Vector means = pool_activation(target);
    ChannelList order(channels);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return means[a] > means[b]; });
    order.resize(k);
    return order;
}

Facet build_facet(std::span<const ImageTensor> images, std::span<const ActivationTensor> activations,
                  const FacetWeights& weights, const LayerRef& layer, std::size_t k) {
    const auto& members = weights.member_indices;
    if (members.empty() || members.size() != weights.weights.size()) {
        throw ValidationError("facet needs matching, non-empty member and weight lists");
    }
    for (std::size_t m : members) {
        if (m >= images.size() || m >= activations.size()) {
            throw ValidationError(fmt::format("member index {} outside the image list", m));
        }
    }
    const Shape3 image_shape = images[members.front()].data.shape();
    const Shape3 act_shape = activations[members.front()].data.shape();
    Facet f;
    f.init_image = ImageTensor(Tensor3(image_shape));
    f.target = ActivationTensor{Tensor3(act_shape), layer.name};
    for (std::size_t n = 0; n < members.size(); ++n) {
        const auto& img = images[members[n]].data;
        const auto& act = activations[members[n]].data;
        require_same_shape(img.shape(), image_shape, fmt::format("facet member {} image", members[n]));
        require_same_shape(act.shape(), act_shape, fmt::format("facet member {} activation", members[n]));
        const double w = weights.weights[n];
        auto dst_img = f.init_image.data.values();
        const auto src_img = img.values();
        for (std::size_t i = 0; i < dst_img.size(); ++i) dst_img[i] += w * src_img[i];
        auto dst_act = f.target.data.values();
        const auto src_act = act.values();
        for (std::size_t i = 0; i < dst_act.size(); ++i) dst_act[i] += w * src_act[i];
    }
    f.weights = weights;
    f.layer = layer;
    f.top_k = top_k_channels(f.target, k);
    return f;
}

nlohmann::json FacetBuildConfig::to_json() const {
    return {{"clusters", clusters},
            {"neighbors", neighbors},
            {"top_k", top_k},
            {"pca_dims", pca_dims},
            {"perplexity", tsne.perplexity},
            {"tsne_iterations", tsne.iterations},
            {"early_exaggeration", tsne.early_exaggeration},
            {"exaggeration_iterations", tsne.exaggeration_iterations},
            {"kmeans_restarts", kmeans.restarts},
            {"kmeans_max_iterations", kmeans.max_iterations},
            {"seed", seed}};
}

FacetBuildResult build_facets(std::span<const ImageTensor> images, std::span<const ActivationTensor> activations,
                              const LayerRef& layer, const FacetBuildConfig& config) {
    if (images.size() != activations.size()) throw ValidationError("image and activation counts differ");
    if (images.empty()) throw ValidationError("no images to build facets from");
    if (config.neighbors == 0) throw ConfigError("neighbors must be >= 1");
    const std::size_t channels = activations.front().data.channels();
    const std::size_t k = config.top_k == 0 ? channels : config.top_k;

    std::vector<Vector> pooled;
    pooled.reserve(activations.size());
    for (const auto& a : activations) pooled.push_back(pool_activation(a));

    const std::size_t dims = std::min({config.pca_dims, channels, pooled.size() - 1});
    if (dims == 0) throw ConfigError("need at least two images to build facets");
    const auto reduced = pca_reduce(pooled, dims);

    TsneOptions tsne = config.tsne;
    tsne.seed = config.seed;
    FacetBuildResult result;
    result.embedding = tsne_embed(reduced, tsne);

    std::vector<Point2> points;
    points.reserve(result.embedding.size());
    for (const auto& e : result.embedding) points.push_back(e.coords);
    result.clusters = kmeans_cluster(points, config.clusters, config.seed + 1, config.kmeans);

    for (std::size_t c = 0; c < config.clusters; ++c) {
        std::vector<std::size_t> candidates;
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (result.clusters.labels[i] == c) candidates.push_back(i);
        }
        const Point2 center = result.clusters.centers[c];
        FacetWeights fw;
        fw.member_indices = nearest_members(points, candidates, center, config.neighbors);
        std::vector<double> distances;
        for (std::size_t m : fw.member_indices) distances.push_back(std::sqrt(squared_distance(points[m], center)));
        fw.weights = facet_weights(distances);
        Facet f = build_facet(images, activations, fw, layer, k);
        f.cluster = c;
        f.center = center;
        f.member_distances = std::move(distances);
        f.config = config.to_json();
        result.facets.push_back(std::move(f));
    }
    return result;
}

Facet single_member_facet(std::span<const ImageTensor> images, std::span<const ActivationTensor> activations,
                          std::size_t index, const LayerRef& layer, std::size_t k) {
    if (index >= images.size()) {
        throw ValidationError(fmt::format("single-member index {} outside [0, {})", index, images.size()));
    }
    FacetWeights fw{{index}, {1.0}};
    const std::size_t channels = activations[index].data.channels();
    Facet f = build_facet(images, activations, fw, layer, k == 0 ? channels : k);
    f.member_distances = {0.0};
    f.config = {{"single_member", index}};
    return f;
}

std::vector<ActivationTensor> collect_activations(const FeatureExtractor& model, std::span<const ImageTensor> images,
                                                  const LayerRef& layer, std::size_t threads) {
    std::vector<ActivationTensor> out(images.size());
    parallel_for(images.size(), threads, [&](std::size_t i) { out[i] = model.forward_to(images[i], layer); });
    return out;
}

namespace {
nlohmann::json shape_json(const Shape3& s) { return {s.channels, s.height, s.width}; }
Shape3 shape_from(const nlohmann::json& j) { return Shape3{j.at(0), j.at(1), j.at(2)}; }
} // namespace

void save_facet(const Facet& facet, const std::filesystem::path& path) {
    nlohmann::json h;
    h["format"] = "fvf";
    h["version"] = 1;
    h["layer"] = {{"name", facet.layer.name}, {"depth_index", facet.layer.depth_index}};
    h["k"] = facet.top_k.size();
    h["top_k"] = facet.top_k;
    h["member_indices"] = facet.weights.member_indices;
    h["weights"] = facet.weights.weights;
    h["member_distances"] = facet.member_distances;
    h["cluster"] = facet.cluster;
    h["center"] = facet.center;
    h["image_shape"] = shape_json(facet.init_image.data.shape());
    h["target_shape"] = shape_json(facet.target.data.shape());
    h["payload_order"] = {"init_image", "target"};
    h["config"] = facet.config;
    std::vector<float> payload;
    append_f32(payload, facet.init_image.data.values());
    append_f32(payload, facet.target.data.values());
    write_container(path, h, payload);
}

Facet load_facet(const std::filesystem::path& path) {
    const Container file = read_container(path);
    const auto& h = file.header;
    if (h.value("format", "") != "fvf") throw IoError(path.string() + ": not an .fvf facet file");
    Facet f;
    f.layer = LayerRef{h.at("layer").at("name"), h.at("layer").at("depth_index")};
    f.top_k = h.at("top_k").get<ChannelList>();
    f.weights.member_indices = h.at("member_indices").get<std::vector<std::size_t>>();
    f.weights.weights = h.at("weights").get<std::vector<double>>();
    f.member_distances = h.value("member_distances", std::vector<double>{});
    f.cluster = h.value("cluster", std::size_t{0});
    f.center = h.value("center", Point2{});
    f.config = h.value("config", nlohmann::json::object());
    const Shape3 is = shape_from(h.at("image_shape"));
    const Shape3 ts = shape_from(h.at("target_shape"));
    if (file.payload.size() != is.size() + ts.size()) {
        throw IoError(fmt::format("{}: payload has {} values, header declares {}", path.string(), file.payload.size(),
                                  is.size() + ts.size()));
    }
    const auto mid = file.payload.begin() + static_cast<std::ptrdiff_t>(is.size());
    f.init_image = ImageTensor(Tensor3(is, std::vector<double>(file.payload.begin(), mid)));
    f.target = ActivationTensor{Tensor3(ts, std::vector<double>(mid, file.payload.end())), f.layer.name};
    validate_channels(f.top_k, ts.channels);
    return f;
}

} // namespace featvis
