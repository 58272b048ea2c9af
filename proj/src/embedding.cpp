#include "featvis/embedding.hpp"

#include "featvis/error.hpp"
#include "featvis/rng.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>

namespace featvis {

namespace {

Eigen::MatrixXd to_matrix(const std::vector<Vector>& vectors) {
    const std::size_t n = vectors.size();
    const std::size_t dim = vectors.front().size();
    Eigen::MatrixXd m(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
        if (vectors[i].size() != dim) {
            throw ValidationError(fmt::format("vector {} has dimension {}, expected {}", i, vectors[i].size(), dim));
        }
        for (std::size_t j = 0; j < dim; ++j) {
            if (!std::isfinite(vectors[i][j])) throw ValidationError(fmt::format("vector {} has non-finite entries", i));
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = vectors[i][j];
        }
    }
    return m;
}

} // namespace

std::vector<Vector> pca_reduce(const std::vector<Vector>& vectors, std::size_t dims) {
    if (vectors.size() < 2) throw ValidationError("PCA needs at least two samples");
    const std::size_t dim = vectors.front().size();
    if (dims == 0 || dims > std::min(dim, vectors.size() - 1)) {
        throw ValidationError(fmt::format("PCA target dimension {} must be in [1, min({}, {})]", dims, dim,
                                          vectors.size() - 1));
    }
    Eigen::MatrixXd x = to_matrix(vectors);
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(x.rows() - 1);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw Error("covariance eigendecomposition failed");

    // Eigen returns eigenvalues in ascending order.
    Eigen::MatrixXd basis(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dims));
    for (std::size_t k = 0; k < dims; ++k) {
        Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(dim - 1 - k));
        Eigen::Index pivot = 0;
        v.cwiseAbs().maxCoeff(&pivot);
        if (v(pivot) < 0.0) v = -v;
        basis.col(static_cast<Eigen::Index>(k)) = v;
    }
    const Eigen::MatrixXd projected = x * basis;
    std::vector<Vector> out(vectors.size(), Vector(dims));
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t k = 0; k < dims; ++k) {
            out[i][k] = projected(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        }
    }
    return out;
}

namespace {

// Conditional affinities P(j|i) with the precision of each row found by
// bisection so that the row entropy equals log(perplexity).
Eigen::MatrixXd conditional_affinities(const Eigen::MatrixXd& sq_dist, double perplexity) {
    const Eigen::Index n = sq_dist.rows();
    const double target = std::log(perplexity);
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
    std::vector<double> row(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        double beta = 1.0;
        double lo = -std::numeric_limits<double>::infinity();
        double hi = std::numeric_limits<double>::infinity();
        for (int iter = 0; iter < 200; ++iter) {
            // Shift by the smallest off-diagonal distance so the exponentials never all underflow.
            double dmin = std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j != i) dmin = std::min(dmin, sq_dist(i, j));
            }
            double sum = 0.0;
            double weighted = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                const auto jj = static_cast<std::size_t>(j);
                row[jj] = j == i ? 0.0 : std::exp(-beta * (sq_dist(i, j) - dmin));
                sum += row[jj];
                weighted += row[jj] * (sq_dist(i, j) - dmin);
            }
            const double entropy = std::log(sum) + beta * weighted / sum;
            const double diff = entropy - target;
            if (std::abs(diff) < 1e-5) break;
            if (diff > 0.0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = std::isinf(lo) ? beta * 0.5 : 0.5 * (beta + lo);
            }
        }
        double sum = 0.0;
        for (double v : row) sum += v;
        for (Eigen::Index j = 0; j < n; ++j) p(i, j) = row[static_cast<std::size_t>(j)] / sum;
    }
    return p;
}

} // namespace

std::vector<EmbeddingPoint> tsne_embed(const std::vector<Vector>& vectors, const TsneOptions& opt) {
    if (!(opt.perplexity > 0.0)) throw ConfigError(fmt::format("perplexity must be > 0, got {}", opt.perplexity));
    const std::size_t count = vectors.size();
    if (!(static_cast<double>(count) > 3.0 * opt.perplexity)) {
        throw ConfigError(fmt::format("t-SNE with perplexity {} needs more than {} points, got {}", opt.perplexity,
                                      3.0 * opt.perplexity, count));
    }
    if (opt.iterations < 1) throw ConfigError("t-SNE needs at least one iteration");

    const Eigen::MatrixXd x = to_matrix(vectors);
    const Eigen::Index n = x.rows();
    Eigen::MatrixXd sq_dist(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) sq_dist(i, j) = (x.row(i) - x.row(j)).squaredNorm();
    }
    const Eigen::MatrixXd cond = conditional_affinities(sq_dist, opt.perplexity);
    Eigen::MatrixXd p = (cond + cond.transpose()) / (2.0 * static_cast<double>(n));
    p = p.cwiseMax(1e-12);

    const double lr = opt.learning_rate > 0.0
                          ? opt.learning_rate
                          : std::max(static_cast<double>(n) / opt.early_exaggeration / 4.0, 50.0);
    Rng rng(opt.seed);
    Eigen::MatrixXd y(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        y(i, 0) = rng.normal(0.0, 1e-4);
        y(i, 1) = rng.normal(0.0, 1e-4);
    }
    Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, 2);
    Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
    Eigen::MatrixXd num(n, n);
    Eigen::MatrixXd grad(n, 2);

    for (int iter = 0; iter < opt.iterations; ++iter) {
        const bool exaggerate = iter < opt.exaggeration_iterations;
        const double exaggeration = exaggerate ? opt.early_exaggeration : 1.0;
        const double momentum = exaggerate ? 0.5 : 0.8;

        double num_sum = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            num(i, i) = 0.0;
            for (Eigen::Index j = i + 1; j < n; ++j) {
                const double v = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
                num(i, j) = v;
                num(j, i) = v;
                num_sum += 2.0 * v;
            }
        }
        grad.setZero();
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                if (i == j) continue;
                const double q = std::max(num(i, j) / num_sum, 1e-12);
                const double coeff = 4.0 * (exaggeration * p(i, j) - q) * num(i, j);
                grad.row(i) += coeff * (y.row(i) - y.row(j));
            }
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index d = 0; d < 2; ++d) {
                const bool same_sign = (grad(i, d) > 0.0) == (update(i, d) > 0.0);
                gains(i, d) = same_sign ? std::max(gains(i, d) * 0.8, 0.01) : gains(i, d) + 0.2;
                update(i, d) = momentum * update(i, d) - lr * gains(i, d) * grad(i, d);
            }
        }
        y += update;
        y.rowwise() -= y.colwise().mean();
    }

    std::vector<EmbeddingPoint> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        out[i].coords = {y(static_cast<Eigen::Index>(i), 0), y(static_cast<Eigen::Index>(i), 1)};
        out[i].image_index = i;
    }
    return out;
}

} // namespace featvis
