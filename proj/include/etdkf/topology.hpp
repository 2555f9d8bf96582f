#pragma once

#include <algorithm>
#include <queue>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "etdkf/errors.hpp"
#include "etdkf/linalg.hpp"

namespace etdkf {

// Communication graph over the node set.  `adjacency` is symmetric with a
// zero diagonal; `neighborhoods[k]` lists k's neighbors plus k itself, sorted.
// C holds the diffusion combination weights (row-stochastic, supported on the
// neighborhoods).
struct Topology {
    Eigen::MatrixXi adjacency;
    std::vector<std::vector<int>> neighborhoods;
    Eigen::MatrixXd C;

    int size() const { return static_cast<int>(adjacency.rows()); }

    int degree(int k) const { return adjacency.row(k).sum(); }

    bool are_neighbors(int k, int j) const { return adjacency(k, j) != 0; }

    void validate() const {
        const int n = size();
        if (n <= 0) throw TopologyError("topology: empty node set");
        if (adjacency.cols() != n) throw TopologyError("topology: adjacency not square");
        for (int i = 0; i < n; ++i) {
            if (adjacency(i, i) != 0) throw TopologyError("topology: nonzero diagonal");
            for (int j = 0; j < n; ++j) {
                if (adjacency(i, j) != adjacency(j, i))
                    throw TopologyError("topology: adjacency not symmetric");
                if (adjacency(i, j) != 0 && adjacency(i, j) != 1)
                    throw TopologyError("topology: adjacency entries must be 0/1");
            }
        }
        if (static_cast<int>(neighborhoods.size()) != n)
            throw TopologyError("topology: neighborhood list size mismatch");
        for (int k = 0; k < n; ++k) {
            std::vector<int> expected;
            for (int j = 0; j < n; ++j)
                if (j == k || adjacency(k, j) != 0) expected.push_back(j);
            if (neighborhoods[k] != expected)
                throw TopologyError("topology: neighborhood inconsistent with adjacency");
        }
        if (C.rows() != n || C.cols() != n) throw TopologyError("topology: C size mismatch");
        for (int k = 0; k < n; ++k) {
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                if (C(k, j) < 0.0) throw TopologyError("topology: negative weight in C");
                if (C(k, j) > 0.0 && j != k && adjacency(k, j) == 0)
                    throw TopologyError("topology: C supported outside neighborhood");
                sum += C(k, j);
            }
            if (std::abs(sum - 1.0) > 1e-12)
                throw TopologyError("topology: rows of C must sum to 1");
        }
    }

    bool is_connected() const {
        const int n = size();
        if (n == 0) return false;
        std::vector<bool> seen(n, false);
        std::queue<int> frontier;
        frontier.push(0);
        seen[0] = true;
        int reached = 1;
        while (!frontier.empty()) {
            int k = frontier.front();
            frontier.pop();
            for (int j = 0; j < n; ++j) {
                if (adjacency(k, j) != 0 && !seen[j]) {
                    seen[j] = true;
                    ++reached;
                    frontier.push(j);
                }
            }
        }
        return reached == n;
    }

    // Directed neighbor pairs (k, j) with j in N_k \ {k}, ordered by receiver
    // then sender.  This is the row order of the stacked measurement map.
    std::vector<std::pair<int, int>> directed_edges() const {
        std::vector<std::pair<int, int>> edges;
        const int n = size();
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < n; ++j)
                if (adjacency(k, j) != 0) edges.emplace_back(k, j);
        return edges;
    }
};

// Metropolis weights: c_kj = 1/(1 + max(d_k, d_j)) for neighbors, the
// complement on the diagonal.  Symmetric and doubly stochastic.
inline Eigen::MatrixXd metropolis_weights(const Eigen::MatrixXi& adjacency) {
    const int n = static_cast<int>(adjacency.rows());
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
    std::vector<int> degree(n, 0);
    for (int k = 0; k < n; ++k) degree[k] = adjacency.row(k).sum();
    for (int k = 0; k < n; ++k) {
        double off_diag = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j == k || adjacency(k, j) == 0) continue;
            c(k, j) = 1.0 / (1.0 + std::max(degree[k], degree[j]));
            off_diag += c(k, j);
        }
        c(k, k) = 1.0 - off_diag;
    }
    return c;
}

inline Topology topology_from_adjacency(const Eigen::MatrixXi& adjacency) {
    Topology topo;
    topo.adjacency = adjacency;
    const int n = static_cast<int>(adjacency.rows());
    topo.neighborhoods.resize(n);
    for (int k = 0; k < n; ++k) {
        for (int j = 0; j < n; ++j)
            if (j == k || adjacency(k, j) != 0) topo.neighborhoods[k].push_back(j);
    }
    topo.C = metropolis_weights(adjacency);
    topo.validate();
    if (!topo.is_connected()) throw TopologyError("topology: graph is not connected");
    return topo;
}

inline Topology build_fully_connected(int n) {
    if (n < 2) throw TopologyError("topology: need at least 2 nodes");
    Eigen::MatrixXi a = Eigen::MatrixXi::Ones(n, n);
    a.diagonal().setZero();
    return topology_from_adjacency(a);
}

// Undirected k-nearest-neighbor graph over node positions: each node links to
// its k closest peers and links are symmetrized.  Ties break on node index.
inline Topology build_k_nearest(const std::vector<Vec3>& positions, int k) {
    const int n = static_cast<int>(positions.size());
    if (n < 2) throw TopologyError("topology: need at least 2 nodes");
    if (k < 1 || k >= n) throw TopologyError("topology: degree must be in [1, n-1]");
    Eigen::MatrixXi a = Eigen::MatrixXi::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        std::vector<std::pair<double, int>> dist;
        dist.reserve(n - 1);
        for (int j = 0; j < n; ++j)
            if (j != i) dist.emplace_back((positions[i] - positions[j]).norm(), j);
        std::sort(dist.begin(), dist.end());
        for (int m = 0; m < k; ++m) {
            a(i, dist[m].second) = 1;
            a(dist[m].second, i) = 1;
        }
    }
    return topology_from_adjacency(a);
}

inline Topology build_topology(const std::string& kind, const std::vector<Vec3>& positions,
                               int k_nearest) {
    if (kind == "fully_connected") return build_fully_connected(static_cast<int>(positions.size()));
    if (kind == "k_nearest") return build_k_nearest(positions, k_nearest);
    throw TopologyError("topology: unknown kind '" + kind + "'");
}

}  // namespace etdkf
