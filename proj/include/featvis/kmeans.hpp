#pragma once

#include "featvis/embedding.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace featvis {

struct ClusterAssignment {
    std::vector<Point2> centers;
    std::vector<std::size_t> labels;
    double inertia = 0.0;
    int iterations = 0;
};

struct KMeansOptions {
    int max_iterations = 300;
    /// Independent k-means++ seedings; the lowest-inertia run wins.
    int restarts = 10;
};

/// Lloyd's algorithm seeded with k-means++. Stops when assignments are stable
/// or after `max_iterations`. An empty cluster takes over the point that is
/// farthest from its current center.
ClusterAssignment kmeans_cluster(std::span<const Point2> points, std::size_t clusters, std::uint64_t seed,
                                 const KMeansOptions& options = {});

double squared_distance(const Point2& a, const Point2& b);

} // namespace featvis
