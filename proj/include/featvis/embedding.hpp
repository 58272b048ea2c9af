#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace featvis {

using Vector = std::vector<double>;
using Point2 = std::array<double, 2>;

struct EmbeddingPoint {
    Point2 coords{};
    std::size_t image_index = 0;
};

/// Mean-centered projection onto the top `dims` principal components of the
/// sample covariance, ordered by descending eigenvalue. Each component is
/// sign-normalized so that its largest-magnitude loading is positive.
/// Requires at least two samples and dims <= min(dimension, count - 1).
std::vector<Vector> pca_reduce(const std::vector<Vector>& vectors, std::size_t dims);

struct TsneOptions {
    double perplexity = 5.0;
    int iterations = 1000;
    double early_exaggeration = 12.0;
    int exaggeration_iterations = 250;
    /// <= 0 selects max(count / early_exaggeration / 4, 50).
    double learning_rate = 0.0;
    std::uint64_t seed = 0;
};

/// Exact t-SNE: per-point precisions found by bisection to match the
/// perplexity, symmetrized joint affinities, Student-t output kernel and
/// gradient descent with momentum, adaptive gains and early exaggeration.
/// Requires count > 3 * perplexity.
std::vector<EmbeddingPoint> tsne_embed(const std::vector<Vector>& vectors, const TsneOptions& options);

} // namespace featvis
