#include "featvis/synthetic.hpp"

#include "featvis/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace featvis {

namespace {

struct BlobClass {
    std::array<double, 3> color;
    int blobs;
    double sigma_fraction;
};

constexpr std::array<BlobClass, 3> kClasses{{
    {{0.9, 0.25, 0.15}, 1, 0.18},
    {{0.2, 0.85, 0.25}, 2, 0.09},
    {{0.2, 0.3, 0.95}, 4, 0.05},
}};

} // namespace

SyntheticSet make_blob_images(std::size_t count, std::size_t height, std::size_t width, std::uint64_t seed) {
    Rng rng(seed);
    SyntheticSet set;
    const double side = static_cast<double>(std::min(height, width));
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t label = i % kClasses.size();
        const BlobClass& cls = kClasses[label];
        ImageTensor img(height, width, 0.08);
        for (int b = 0; b < cls.blobs; ++b) {
            const double cy = rng.uniform(0.25, 0.75) * static_cast<double>(height);
            const double cx = rng.uniform(0.25, 0.75) * static_cast<double>(width);
            const double sigma = cls.sigma_fraction * side * rng.uniform(0.85, 1.15);
            for (std::size_t y = 0; y < height; ++y) {
                for (std::size_t x = 0; x < width; ++x) {
                    const double dy = static_cast<double>(y) - cy;
                    const double dx = static_cast<double>(x) - cx;
                    const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                    for (std::size_t c = 0; c < 3; ++c) img.data(c, y, x) += cls.color[c] * g;
                }
            }
        }
        for (double& v : img.data.values()) v = std::clamp(v + rng.normal(0.0, 0.03), 0.0, 1.0);
        set.images.push_back(std::move(img));
        set.labels.push_back(label);
    }
    return set;
}

} // namespace featvis
