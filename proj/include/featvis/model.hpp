#pragma once

#include "featvis/tensor.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace featvis {

/// A named layer and its position in forward order (0 = first layer).
struct LayerRef {
    std::string name;
    std::size_t depth_index = 0;

    bool operator==(const LayerRef&) const = default;
};

/// Scalar objective over the activations of layer i-1 (`prev`) and layer i
/// (`curr`). Implementations return the value and write d(value)/d(prev) and
/// d(value)/d(curr) into the supplied tensors, which arrive zero-filled with
/// matching shapes.
using PairObjective = std::function<double(const ActivationTensor& prev,
                                           const ActivationTensor& curr,
                                           Tensor3& grad_prev,
                                           Tensor3& grad_curr)>;

struct GradientResult {
    double loss = 0.0;
    ImageTensor gradient;
};

/// Differentiable feature-extractor contract. Implementations must be safe to
/// call concurrently; every call owns its intermediate buffers.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;

    virtual std::vector<std::string> layer_names() const = 0;

    /// Throws ResolutionError for unknown names.
    virtual LayerRef resolve(std::string_view name) const = 0;

    /// Output shape of `layer` for an input of the given spatial size.
    virtual Shape3 output_shape(const LayerRef& layer, std::size_t height, std::size_t width) const = 0;

    virtual ActivationTensor forward_to(const ImageTensor& image, const LayerRef& layer) const = 0;

    /// (output of the layer preceding `layer`, output of `layer`).
    virtual std::pair<ActivationTensor, ActivationTensor> forward_pair(const ImageTensor& image,
                                                                       const LayerRef& layer) const = 0;

    /// One forward pass plus reverse-mode backward pass of `objective`.
    virtual GradientResult loss_gradient(const ImageTensor& image,
                                         const LayerRef& layer,
                                         const PairObjective& objective) const = 0;

    /// Number of forward passes executed since construction or the last reset.
    std::uint64_t forward_calls() const noexcept { return forward_calls_.load(); }
    void reset_forward_calls() noexcept { forward_calls_.store(0); }

protected:
    void count_forward() const noexcept { forward_calls_.fetch_add(1); }

private:
    mutable std::atomic<std::uint64_t> forward_calls_{0};
};

namespace toy {

struct Conv3x3 {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::vector<double> weights; ///< (out, in, 3, 3)
    std::vector<double> bias;    ///< (out)

    double& w(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) {
        return weights[((o * in_channels + i) * 3 + ky) * 3 + kx];
    }
    double w(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
        return weights[((o * in_channels + i) * 3 + ky) * 3 + kx];
    }
};

struct Relu {};
struct MaxPool2x2 {};

using Op = std::variant<Conv3x3, Relu, MaxPool2x2>;

struct Layer {
    std::string name;
    Op op;
};

} // namespace toy

/// Small fixed-architecture CNN with seeded weights:
///   conv1 (3->8) relu1 conv2 (8->16) relu2 pool1 conv3 (16->32) relu3
/// All convolutions are 3x3, stride 1, zero padding 1. Pooling is 2x2 max
/// with stride 2.
class ToyCnn final : public FeatureExtractor {
public:
    /// Weights and biases drawn uniformly from [-s, s], s = 1/sqrt(fan_in),
    /// rounded to float32 so that serialization is lossless.
    static ToyCnn create(std::uint64_t seed);

    ToyCnn(std::vector<toy::Layer> layers, std::uint64_t seed);
    ToyCnn(const ToyCnn& other);
    ToyCnn& operator=(const ToyCnn&) = delete;

    std::uint64_t seed() const noexcept { return seed_; }
    const std::vector<toy::Layer>& layers() const noexcept { return layers_; }

    /// Mutable access for tests and adapters; do not call while other
    /// threads evaluate the model.
    std::vector<toy::Layer>& mutable_layers() noexcept { return layers_; }
    void zero_biases();

    std::vector<std::string> layer_names() const override;
    LayerRef resolve(std::string_view name) const override;
    Shape3 output_shape(const LayerRef& layer, std::size_t height, std::size_t width) const override;
    ActivationTensor forward_to(const ImageTensor& image, const LayerRef& layer) const override;
    std::pair<ActivationTensor, ActivationTensor> forward_pair(const ImageTensor& image,
                                                               const LayerRef& layer) const override;
    GradientResult loss_gradient(const ImageTensor& image,
                                 const LayerRef& layer,
                                 const PairObjective& objective) const override;

    /// Writes the `.fvm` format: one JSON header line followed by the
    /// little-endian float32 weights then biases of each conv in order.
    void save(const std::filesystem::path& path) const;
    static ToyCnn load(const std::filesystem::path& path);

private:
    void validate_input(const ImageTensor& image) const;
    void check_layer(const LayerRef& layer) const;
    /// Outputs of layers 0..last inclusive.
    std::vector<Tensor3> run_forward(const ImageTensor& image, std::size_t last) const;

    std::vector<toy::Layer> layers_;
    std::uint64_t seed_ = 0;
};

} // namespace featvis
