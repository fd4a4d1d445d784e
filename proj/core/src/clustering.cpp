#include "advsr/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace advsr {

namespace {

double sqdist(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
        const double c = a[i] - b[i];
        s += c * c;
    }
    return s;
}

Matrix cluster_means(const Matrix& x, const std::vector<int>& assign, int k) {
    Matrix centers(k, x.cols);
    std::vector<int> count(k, 0);
    for (int i = 0; i < x.rows; ++i) {
        count[assign[i]]++;
        for (int j = 0; j < x.cols; ++j) centers.at(assign[i], j) += x.at(i, j);
    }
    for (int c = 0; c < k; ++c)
        if (count[c] > 0)
            for (int j = 0; j < x.cols; ++j) centers.at(c, j) /= count[c];
    return centers;
}

// Prefix sums for O(d) segment SSE queries:
// sse([a,b)) = sum ||x||^2 - ||sum x||^2 / (b-a).
struct SegmentSse {
    Matrix s1;              // (n+1) x d cumulative sums
    std::vector<double> s2; // n+1 cumulative squared norms
    int d;

    explicit SegmentSse(const Matrix& x) : s1(x.rows + 1, x.cols), s2(x.rows + 1, 0.0), d(x.cols) {
        for (int i = 0; i < x.rows; ++i) {
            double sq = 0.0;
            for (int j = 0; j < d; ++j) {
                s1.at(i + 1, j) = s1.at(i, j) + x.at(i, j);
                sq += x.at(i, j) * x.at(i, j);
            }
            s2[i + 1] = s2[i] + sq;
        }
    }

    double operator()(int a, int b) const {
        if (b <= a) return 0.0;
        double norm2 = 0.0;
        for (int j = 0; j < d; ++j) {
            const double s = s1.at(b, j) - s1.at(a, j);
            norm2 += s * s;
        }
        return s2[b] - s2[a] - norm2 / (b - a);
    }
};

}  // namespace

double within_cluster_sse(const Matrix& x, const std::vector<int>& assign, const Matrix& centers) {
    double sse = 0.0;
    for (int i = 0; i < x.rows; ++i) sse += sqdist(x.row(i), centers.row(assign[i]), x.cols);
    return sse;
}

ClusterResult kmeans_cluster(const Matrix& x, int k, Rng& rng, int max_iters, double tol) {
    const int n = x.rows, d = x.cols;
    if (n < 1) throw std::invalid_argument("kmeans: empty matrix");
    if (k < 1 || k > n) throw std::invalid_argument("kmeans: need 1 <= k <= n");

    ClusterResult res;
    res.centers = Matrix(k, d);
    res.assign.assign(n, 0);

    // kmeans++ seeding
    std::vector<double> dist(n, std::numeric_limits<double>::max());
    int first = rng.uniform_int(0, n - 1);
    for (int j = 0; j < d; ++j) res.centers.at(0, j) = x.at(first, j);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            dist[i] = std::min(dist[i], sqdist(x.row(i), res.centers.row(c - 1), d));
            total += dist[i];
        }
        int pick = n - 1;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += dist[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.uniform_int(0, n - 1);
        }
        for (int j = 0; j < d; ++j) res.centers.at(c, j) = x.at(pick, j);
    }

    for (int iter = 0; iter < max_iters; ++iter) {
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = sqdist(x.row(i), res.centers.row(0), d);
            for (int c = 1; c < k; ++c) {
                const double dd = sqdist(x.row(i), res.centers.row(c), d);
                if (dd < best_d) {
                    best_d = dd;
                    best = c;
                }
            }
            res.assign[i] = best;
        }

        Matrix next = cluster_means(x, res.assign, k);
        std::vector<int> count(k, 0);
        for (int a : res.assign) count[a]++;
        for (int c = 0; c < k; ++c) {
            if (count[c] == 0) {
                // revive empty cluster at the point farthest from its center
                int far_i = 0;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    const double dd = sqdist(x.row(i), next.row(res.assign[i]), d);
                    if (dd > far_d) {
                        far_d = dd;
                        far_i = i;
                    }
                }
                for (int j = 0; j < d; ++j) next.at(c, j) = x.at(far_i, j);
            }
        }

        double shift = 0.0;
        for (int c = 0; c < k; ++c) shift = std::max(shift, sqdist(res.centers.row(c), next.row(c), d));
        res.centers = std::move(next);
        res.objective_trace.push_back(within_cluster_sse(x, res.assign, res.centers));
        if (std::sqrt(shift) < tol) break;
    }
    return res;
}

ClusterResult warped_kmeans_cluster(const Matrix& x, int k, int max_passes) {
    const int n = x.rows;
    if (n < 1) throw std::invalid_argument("warped-kmeans: empty matrix");
    if (k < 1 || k > n) throw std::invalid_argument("warped-kmeans: need 1 <= k <= n");

    const SegmentSse sse(x);

    // boundaries b[0]=0 < b[1] < ... < b[k] = n; segment c = [b[c], b[c+1])
    std::vector<int> b(k + 1);
    for (int c = 0; c <= k; ++c) b[c] = static_cast<int>(static_cast<long long>(c) * n / k);

    auto total = [&]() {
        double s = 0.0;
        for (int c = 0; c < k; ++c) s += sse(b[c], b[c + 1]);
        return s;
    };

    ClusterResult res;
    res.objective_trace.push_back(total());
    for (int pass = 0; pass < max_passes; ++pass) {
        bool moved = false;
        for (int c = 1; c < k; ++c) {
            // relocate boundary c anywhere between its neighbors, keeping
            // both adjacent segments nonempty
            const int lo = b[c - 1] + 1, hi = b[c + 1] - 1;
            double best = sse(b[c - 1], b[c]) + sse(b[c], b[c + 1]);
            int best_pos = b[c];
            for (int p = lo; p <= hi; ++p) {
                if (p == b[c]) continue;
                const double cand = sse(b[c - 1], p) + sse(p, b[c + 1]);
                if (cand < best - 1e-12) {
                    best = cand;
                    best_pos = p;
                }
            }
            if (best_pos != b[c]) {
                b[c] = best_pos;
                moved = true;
            }
        }
        res.objective_trace.push_back(total());
        if (!moved) break;
    }

    res.assign.assign(n, 0);
    for (int c = 0; c < k; ++c)
        for (int i = b[c]; i < b[c + 1]; ++i) res.assign[i] = c;
    res.centers = cluster_means(x, res.assign, k);
    return res;
}

}  // namespace advsr
