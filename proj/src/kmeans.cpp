#include "featvis/kmeans.hpp"

#include "featvis/error.hpp"
#include "featvis/rng.hpp"

#include <cmath>
#include <fmt/format.h>
#include <limits>

namespace featvis {

double squared_distance(const Point2& a, const Point2& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    return dx * dx + dy * dy;
}

namespace {

std::vector<Point2> seed_plus_plus(std::span<const Point2> points, std::size_t clusters, Rng& rng) {
    const std::size_t n = points.size();
    std::vector<Point2> centers;
    std::vector<bool> chosen(n, false);
    std::vector<double> mind(n, std::numeric_limits<double>::infinity());
    std::size_t pick = rng.below(n);
    while (centers.size() < clusters) {
        centers.push_back(points[pick]);
        chosen[pick] = true;
        if (centers.size() == clusters) break;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mind[i] = std::min(mind[i], squared_distance(points[i], centers.back()));
            total += mind[i];
        }
        if (total > 0.0) {
            double r = rng.uniform() * total;
            pick = n;
            for (std::size_t i = 0; i < n; ++i) {
                if (mind[i] <= 0.0) continue;
                pick = i;
                r -= mind[i];
                if (r < 0.0) break;
            }
        } else {
            // Every remaining point duplicates a center: pick uniformly among the unchosen ones.
            std::vector<std::size_t> rest;
            for (std::size_t i = 0; i < n; ++i) {
                if (!chosen[i]) rest.push_back(i);
            }
            pick = rest[rng.below(rest.size())];
        }
    }
    return centers;
}

std::size_t nearest_center(const Point2& p, const std::vector<Point2>& centers) {
    std::size_t best = 0;
    double best_d = squared_distance(p, centers[0]);
    for (std::size_t c = 1; c < centers.size(); ++c) {
        const double d = squared_distance(p, centers[c]);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

void recompute_centers(std::span<const Point2> points, ClusterAssignment& a) {
    const std::size_t k = a.centers.size();
    std::vector<Point2> sums(k, Point2{0.0, 0.0});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        sums[a.labels[i]][0] += points[i][0];
        sums[a.labels[i]][1] += points[i][1];
        ++counts[a.labels[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
        while (counts[c] == 0) {
            // Repair: move the point farthest from its center into the empty cluster.
            std::size_t far = points.size();
            double far_d = -1.0;
            for (std::size_t i = 0; i < points.size(); ++i) {
                if (counts[a.labels[i]] < 2) continue;
                const double d = squared_distance(points[i], a.centers[a.labels[i]]);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            const std::size_t old = a.labels[far];
            sums[old][0] -= points[far][0];
            sums[old][1] -= points[far][1];
            --counts[old];
            a.labels[far] = c;
            sums[c] = points[far];
            counts[c] = 1;
        }
    }
    for (std::size_t c = 0; c < k; ++c) {
        a.centers[c] = {sums[c][0] / static_cast<double>(counts[c]), sums[c][1] / static_cast<double>(counts[c])};
    }
}

ClusterAssignment lloyd(std::span<const Point2> points, std::vector<Point2> centers, int max_iterations) {
    ClusterAssignment a;
    a.centers = std::move(centers);
    a.labels.assign(points.size(), 0);
    for (std::size_t i = 0; i < points.size(); ++i) a.labels[i] = nearest_center(points[i], a.centers);
    for (int iter = 0; iter < max_iterations; ++iter) {
        a.iterations = iter + 1;
        recompute_centers(points, a);
        bool changed = false;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const std::size_t c = nearest_center(points[i], a.centers);
            if (c != a.labels[i]) {
                a.labels[i] = c;
                changed = true;
            }
        }
        if (!changed) break;
    }
    // A reassignment can still leave a cluster empty on the final pass.
    recompute_centers(points, a);
    a.inertia = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) a.inertia += squared_distance(points[i], a.centers[a.labels[i]]);
    return a;
}

} // namespace

ClusterAssignment kmeans_cluster(std::span<const Point2> points, std::size_t clusters, std::uint64_t seed,
                                 const KMeansOptions& options) {
    if (clusters == 0) throw ConfigError("k-means needs at least one cluster");
    if (points.size() < clusters) {
        throw ConfigError(fmt::format("k-means with {} clusters needs at least {} points, got {}", clusters, clusters,
                                      points.size()));
    }
    for (const auto& p : points) {
        if (!std::isfinite(p[0]) || !std::isfinite(p[1])) throw ValidationError("k-means input has non-finite points");
    }
    Rng rng(seed);
    ClusterAssignment best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int run = 0; run < std::max(1, options.restarts); ++run) {
        ClusterAssignment a = lloyd(points, seed_plus_plus(points, clusters, rng), options.max_iterations);
        if (a.inertia < best.inertia) best = std::move(a);
    }
    return best;
}

} // namespace featvis
