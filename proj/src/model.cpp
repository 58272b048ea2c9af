#include "featvis/model.hpp"

#include "featvis/container.hpp"
#include "featvis/error.hpp"
#include "featvis/rng.hpp"

#include <cmath>
#include <fmt/format.h>

namespace featvis {

namespace {

using toy::Conv3x3;
using toy::MaxPool2x2;
using toy::Relu;

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Tensor3 conv_forward(const Conv3x3& conv, const Tensor3& in) {
    const std::size_t h = in.height(), w = in.width();
    Tensor3 out(Shape3{conv.out_channels, h, w});
    for (std::size_t o = 0; o < conv.out_channels; ++o) {
        auto dst = out.channel(o);
        std::fill(dst.begin(), dst.end(), conv.bias[o]);
        for (std::size_t i = 0; i < conv.in_channels; ++i) {
            const auto src = in.channel(i);
            for (std::size_t ky = 0; ky < 3; ++ky) {
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    const double wt = conv.w(o, i, ky, kx);
                    // Output rows/cols whose tap (y+ky-1, x+kx-1) lands inside the input.
                    const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? h - 1 : h;
                    const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? w - 1 : w;
                    for (std::size_t y = y0; y < y1; ++y) {
                        const double* row = src.data() + (y + ky - 1) * w;
                        double* drow = dst.data() + y * w;
                        for (std::size_t x = x0; x < x1; ++x) drow[x] += wt * row[x + kx - 1];
                    }
                }
            }
        }
    }
    return out;
}

Tensor3 conv_backward(const Conv3x3& conv, const Tensor3& grad_out) {
    const std::size_t h = grad_out.height(), w = grad_out.width();
    Tensor3 grad_in(Shape3{conv.in_channels, h, w});
    for (std::size_t o = 0; o < conv.out_channels; ++o) {
        const auto g = grad_out.channel(o);
        for (std::size_t i = 0; i < conv.in_channels; ++i) {
            auto dst = grad_in.channel(i);
            for (std::size_t ky = 0; ky < 3; ++ky) {
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    const double wt = conv.w(o, i, ky, kx);
                    const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? h - 1 : h;
                    const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? w - 1 : w;
                    for (std::size_t y = y0; y < y1; ++y) {
                        double* row = dst.data() + (y + ky - 1) * w;
                        const double* grow = g.data() + y * w;
                        for (std::size_t x = x0; x < x1; ++x) row[x + kx - 1] += wt * grow[x];
                    }
                }
            }
        }
    }
    return grad_in;
}

Tensor3 relu_forward(const Tensor3& in) {
    Tensor3 out = in;
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return out;
}

// Subgradient at exactly 0 is 0.
Tensor3 relu_backward(const Tensor3& in, const Tensor3& grad_out) {
    Tensor3 grad_in = grad_out;
    const auto x = in.values();
    auto g = grad_in.values();
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (!(x[k] > 0.0)) g[k] = 0.0;
    }
    return grad_in;
}

// Index (within the input channel plane) of the first maximal element of
// each 2x2 window, scanning row-major.
std::size_t pool_argmax(std::span<const double> plane, std::size_t w, std::size_t oy, std::size_t ox) {
    const std::size_t cand[4] = {(2 * oy) * w + 2 * ox, (2 * oy) * w + 2 * ox + 1,
                                 (2 * oy + 1) * w + 2 * ox, (2 * oy + 1) * w + 2 * ox + 1};
    std::size_t best = cand[0];
    for (std::size_t k = 1; k < 4; ++k) {
        if (plane[cand[k]] > plane[best]) best = cand[k];
    }
    return best;
}

Tensor3 pool_forward(const Tensor3& in) {
    const std::size_t oh = in.height() / 2, ow = in.width() / 2;
    Tensor3 out(Shape3{in.channels(), oh, ow});
    for (std::size_t c = 0; c < in.channels(); ++c) {
        const auto plane = in.channel(c);
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) out(c, y, x) = plane[pool_argmax(plane, in.width(), y, x)];
        }
    }
    return out;
}

Tensor3 pool_backward(const Tensor3& in, const Tensor3& grad_out) {
    Tensor3 grad_in(in.shape());
    for (std::size_t c = 0; c < in.channels(); ++c) {
        const auto plane = in.channel(c);
        auto dst = grad_in.channel(c);
        for (std::size_t y = 0; y < grad_out.height(); ++y) {
            for (std::size_t x = 0; x < grad_out.width(); ++x) {
                dst[pool_argmax(plane, in.width(), y, x)] += grad_out(c, y, x);
            }
        }
    }
    return grad_in;
}

Conv3x3 make_conv(std::size_t in, std::size_t out, Rng& rng) {
    Conv3x3 conv;
    conv.in_channels = in;
    conv.out_channels = out;
    const double s = 1.0 / std::sqrt(static_cast<double>(in * 9));
    conv.weights.resize(out * in * 9);
    conv.bias.resize(out);
    for (double& v : conv.weights) v = static_cast<float>(rng.uniform(-s, s));
    for (double& v : conv.bias) v = static_cast<float>(rng.uniform(-s, s));
    return conv;
}

const char* op_type(const toy::Op& op) {
    return std::visit(Overloaded{[](const Conv3x3&) { return "conv3x3"; },
                                 [](const Relu&) { return "relu"; },
                                 [](const MaxPool2x2&) { return "maxpool2x2"; }},
                      op);
}

} // namespace

ToyCnn ToyCnn::create(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<toy::Layer> layers;
    layers.push_back({"conv1", make_conv(3, 8, rng)});
    layers.push_back({"relu1", Relu{}});
    layers.push_back({"conv2", make_conv(8, 16, rng)});
    layers.push_back({"relu2", Relu{}});
    layers.push_back({"pool1", MaxPool2x2{}});
    layers.push_back({"conv3", make_conv(16, 32, rng)});
    layers.push_back({"relu3", Relu{}});
    return ToyCnn(std::move(layers), seed);
}

ToyCnn::ToyCnn(std::vector<toy::Layer> layers, std::uint64_t seed) : layers_(std::move(layers)), seed_(seed) {
    if (layers_.empty()) throw ValidationError("model has no layers");
}

ToyCnn::ToyCnn(const ToyCnn& other) : FeatureExtractor(), layers_(other.layers_), seed_(other.seed_) {}

void ToyCnn::zero_biases() {
    for (auto& layer : layers_) {
        if (auto* conv = std::get_if<Conv3x3>(&layer.op)) std::fill(conv->bias.begin(), conv->bias.end(), 0.0);
    }
}

std::vector<std::string> ToyCnn::layer_names() const {
    std::vector<std::string> names;
    for (const auto& l : layers_) names.push_back(l.name);
    return names;
}

LayerRef ToyCnn::resolve(std::string_view name) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].name == name) return LayerRef{layers_[i].name, i};
    }
    std::string known;
    for (const auto& l : layers_) known += (known.empty() ? "" : ", ") + l.name;
    throw ResolutionError(fmt::format("unknown layer '{}' (model layers: {})", name, known));
}

void ToyCnn::check_layer(const LayerRef& layer) const {
    if (layer.depth_index >= layers_.size() || layers_[layer.depth_index].name != layer.name) {
        throw ResolutionError(fmt::format("layer '{}' at depth {} does not resolve", layer.name, layer.depth_index));
    }
}

Shape3 ToyCnn::output_shape(const LayerRef& layer, std::size_t height, std::size_t width) const {
    check_layer(layer);
    Shape3 s{3, height, width};
    for (std::size_t i = 0; i <= layer.depth_index; ++i) {
        std::visit(Overloaded{[&](const Conv3x3& c) { s.channels = c.out_channels; },
                              [](const Relu&) {},
                              [&](const MaxPool2x2&) {
                                  s.height /= 2;
                                  s.width /= 2;
                              }},
                   layers_[i].op);
    }
    return s;
}

void ToyCnn::validate_input(const ImageTensor& image) const {
    const auto& s = image.data.shape();
    if (s.channels != 3 || s.height < 2 || s.width < 2) {
        throw ValidationError(fmt::format("model expects a 3xHxW image with H, W >= 2, got {}", to_string(s)));
    }
    require_finite(image.data, "input image");
}

std::vector<Tensor3> ToyCnn::run_forward(const ImageTensor& image, std::size_t last) const {
    validate_input(image);
    count_forward();
    std::vector<Tensor3> outputs;
    outputs.reserve(last + 1);
    const Tensor3* in = &image.data;
    for (std::size_t i = 0; i <= last; ++i) {
        outputs.push_back(std::visit(Overloaded{[&](const Conv3x3& c) { return conv_forward(c, *in); },
                                                [&](const Relu&) { return relu_forward(*in); },
                                                [&](const MaxPool2x2&) { return pool_forward(*in); }},
                                     layers_[i].op));
        in = &outputs.back();
    }
    return outputs;
}

ActivationTensor ToyCnn::forward_to(const ImageTensor& image, const LayerRef& layer) const {
    check_layer(layer);
    auto outputs = run_forward(image, layer.depth_index);
    return ActivationTensor{std::move(outputs.back()), layer.name};
}

std::pair<ActivationTensor, ActivationTensor> ToyCnn::forward_pair(const ImageTensor& image,
                                                                   const LayerRef& layer) const {
    check_layer(layer);
    if (layer.depth_index == 0) {
        throw ResolutionError(fmt::format("layer '{}' is the first layer and has no previous activation", layer.name));
    }
    auto outputs = run_forward(image, layer.depth_index);
    const std::size_t i = layer.depth_index;
    return {ActivationTensor{std::move(outputs[i - 1]), layers_[i - 1].name},
            ActivationTensor{std::move(outputs[i]), layers_[i].name}};
}

GradientResult ToyCnn::loss_gradient(const ImageTensor& image,
                                     const LayerRef& layer,
                                     const PairObjective& objective) const {
    check_layer(layer);
    if (layer.depth_index == 0) {
        throw ResolutionError(fmt::format("layer '{}' is the first layer and has no previous activation", layer.name));
    }
    const std::size_t top = layer.depth_index;
    const auto outputs = run_forward(image, top);
    const ActivationTensor prev{outputs[top - 1], layers_[top - 1].name};
    const ActivationTensor curr{outputs[top], layers_[top].name};
    Tensor3 grad_prev(prev.data.shape());
    Tensor3 grad(curr.data.shape());
    GradientResult result;
    result.loss = objective(prev, curr, grad_prev, grad);

    for (std::size_t i = top + 1; i-- > 0;) {
        if (i + 1 == top) grad += grad_prev;
        const Tensor3& in = i == 0 ? image.data : outputs[i - 1];
        grad = std::visit(Overloaded{[&](const Conv3x3& c) { return conv_backward(c, grad); },
                                     [&](const Relu&) { return relu_backward(in, grad); },
                                     [&](const MaxPool2x2&) { return pool_backward(in, grad); }},
                          layers_[i].op);
    }
    result.gradient = ImageTensor(std::move(grad));
    return result;
}

void ToyCnn::save(const std::filesystem::path& path) const {
    nlohmann::json header;
    header["format"] = "fvm";
    header["version"] = 1;
    header["seed"] = seed_;
    header["layers"] = nlohmann::json::array();
    std::vector<float> payload;
    for (const auto& layer : layers_) {
        nlohmann::json entry{{"name", layer.name}, {"type", op_type(layer.op)}};
        if (const auto* conv = std::get_if<Conv3x3>(&layer.op)) {
            entry["in"] = conv->in_channels;
            entry["out"] = conv->out_channels;
            entry["stride"] = 1;
            entry["pad"] = 1;
            entry["weight_shape"] = {conv->out_channels, conv->in_channels, 3, 3};
            entry["bias_shape"] = {conv->out_channels};
            append_f32(payload, conv->weights);
            append_f32(payload, conv->bias);
        }
        header["layers"].push_back(entry);
    }
    write_container(path, header, payload);
}

ToyCnn ToyCnn::load(const std::filesystem::path& path) {
    const Container file = read_container(path);
    const auto& h = file.header;
    if (h.value("format", "") != "fvm") throw IoError(path.string() + ": not an .fvm model file");
    std::vector<toy::Layer> layers;
    std::size_t offset = 0;
    auto take = [&](std::size_t n) {
        if (offset + n > file.payload.size()) throw IoError(path.string() + ": payload shorter than header declares");
        std::vector<double> v(file.payload.begin() + offset, file.payload.begin() + offset + n);
        offset += n;
        return v;
    };
    for (const auto& entry : h.at("layers")) {
        const std::string type = entry.at("type");
        toy::Layer layer{entry.at("name"), Relu{}};
        if (type == "conv3x3") {
            Conv3x3 conv;
            conv.in_channels = entry.at("in");
            conv.out_channels = entry.at("out");
            conv.weights = take(conv.out_channels * conv.in_channels * 9);
            conv.bias = take(conv.out_channels);
            layer.op = std::move(conv);
        } else if (type == "maxpool2x2") {
            layer.op = MaxPool2x2{};
        } else if (type != "relu") {
            throw IoError(fmt::format("{}: unsupported layer type '{}'", path.string(), type));
        }
        layers.push_back(std::move(layer));
    }
    if (offset != file.payload.size()) throw IoError(path.string() + ": payload longer than header declares");
    return ToyCnn(std::move(layers), h.at("seed").get<std::uint64_t>());
}

} // namespace featvis
