#pragma once

#include <vector>

#include "advsr/matrix.hpp"
#include "advsr/rng.hpp"

namespace advsr {

struct ClusterResult {
    std::vector<int> assign;               // row -> cluster id
    Matrix centers;                        // k x d
    std::vector<double> objective_trace;   // within-cluster SSE per iteration
};

// kmeans++ seeding followed by Lloyd iterations (shift tolerance / cap).
ClusterResult kmeans_cluster(const Matrix& x, int k, Rng& rng, int max_iters = 100, double tol = 1e-6);

// Contiguous-segment clustering: assignments are monotone non-decreasing over
// row index. Starts from K equal segments and moves one boundary at a time,
// accepting only strict SSE decreases.
ClusterResult warped_kmeans_cluster(const Matrix& x, int k, int max_passes = 100);

double within_cluster_sse(const Matrix& x, const std::vector<int>& assign, const Matrix& centers);

}  // namespace advsr
