#include "nai/graph.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

namespace nai {

Graph build_graph(std::span<const std::pair<NodeId, NodeId>> edges, i64 n) {
  require(n > 0, Errc::invalid_argument, "build_graph: node count must be positive");

  std::vector<std::pair<NodeId, NodeId>> dir;
  dir.reserve(edges.size() * 2);
  for (const auto& [u, v] : edges) {
    require(u >= 0 && u < n && v >= 0 && v < n, Errc::invalid_argument,
            "build_graph: edge endpoint out of range");
    if (u == v) continue;
    dir.emplace_back(u, v);
    dir.emplace_back(v, u);
  }
  std::sort(dir.begin(), dir.end());
  dir.erase(std::unique(dir.begin(), dir.end()), dir.end());

  Graph g;
  g.n = n;
  g.m = static_cast<i64>(dir.size()) / 2;
  g.row_offsets.assign(static_cast<std::size_t>(n) + 1, 0);
  g.col_indices.reserve(dir.size());
  for (const auto& [u, v] : dir) g.row_offsets[static_cast<std::size_t>(u) + 1]++;
  for (i64 i = 0; i < n; ++i) g.row_offsets[i + 1] += g.row_offsets[i];
  for (const auto& [u, v] : dir) g.col_indices.push_back(v);  // sorted pairs keep rows ascending
  g.degrees.resize(n);
  for (i64 i = 0; i < n; ++i) g.degrees[i] = g.row_offsets[i + 1] - g.row_offsets[i];
  return g;
}

NormalizedAdjacency normalize(const Graph& g, double gamma) {
  require(gamma >= 0.0 && gamma <= 1.0, Errc::invalid_argument, "normalize: gamma must lie in [0,1]");

  std::vector<double> left(g.n), right(g.n);
  for (i64 i = 0; i < g.n; ++i) {
    const double dt = static_cast<double>(g.degrees[i] + 1);
    left[i] = std::pow(dt, gamma - 1.0);
    right[i] = std::pow(dt, -gamma);
  }

  NormalizedAdjacency adj;
  adj.n = g.n;
  adj.gamma = gamma;
  adj.row_offsets.assign(static_cast<std::size_t>(g.n) + 1, 0);
  adj.col_indices.reserve(g.col_indices.size() + static_cast<std::size_t>(g.n));
  adj.values.reserve(adj.col_indices.capacity());

  for (i64 i = 0; i < g.n; ++i) {
    bool self_done = false;
    for (i64 e = g.row_offsets[i]; e < g.row_offsets[i + 1]; ++e) {
      const NodeId j = g.col_indices[e];
      if (!self_done && j > i) {
        adj.col_indices.push_back(i);
        adj.values.push_back(left[i] * right[i]);
        self_done = true;
      }
      adj.col_indices.push_back(j);
      adj.values.push_back(left[i] * right[j]);
    }
    if (!self_done) {
      adj.col_indices.push_back(i);
      adj.values.push_back(left[i] * right[i]);
    }
    adj.row_offsets[i + 1] = static_cast<i64>(adj.col_indices.size());
  }
  return adj;
}

FrontierCone k_hop_frontier(const Graph& g, std::span<const NodeId> batch, i64 depth) {
  require(!batch.empty(), Errc::invalid_argument, "k_hop_frontier: batch must be nonempty");
  require(depth >= 1, Errc::invalid_argument, "k_hop_frontier: depth must be at least 1");

  std::vector<char> seen(g.n, 0);
  std::vector<NodeId> cur;
  cur.reserve(batch.size());
  for (NodeId b : batch) {
    require(b >= 0 && b < g.n, Errc::invalid_argument, "k_hop_frontier: node id outside graph");
    if (!seen[b]) {
      seen[b] = 1;
      cur.push_back(b);
    }
  }
  std::sort(cur.begin(), cur.end());

  FrontierCone cone;
  cone.layers.reserve(static_cast<std::size_t>(depth) + 1);
  cone.layers.push_back(cur);
  for (i64 t = 1; t <= depth; ++t) {
    const std::vector<NodeId>& prev = cone.layers.back();
    std::vector<NodeId> fresh;
    for (NodeId u : prev) {
      for (NodeId v : g.neighbors(u)) {
        if (!seen[v]) {
          seen[v] = 1;
          fresh.push_back(v);
        }
      }
    }
    std::sort(fresh.begin(), fresh.end());
    std::vector<NodeId> layer;
    layer.reserve(prev.size() + fresh.size());
    std::merge(prev.begin(), prev.end(), fresh.begin(), fresh.end(), std::back_inserter(layer));
    cone.layers.push_back(std::move(layer));
  }
  return cone;
}

double second_eigenvalue(const NormalizedAdjacency& adj, i64 dense_cap) {
  require(adj.n >= 2, Errc::invalid_argument, "second_eigenvalue: needs at least two nodes");
  require(adj.n <= dense_cap, Errc::invalid_argument, "second_eigenvalue: dense solver cap exceeded");

  // d_i + 1 equals the stored row length (diagonal always present).
  std::vector<double> inv_sqrt(adj.n);
  for (i64 i = 0; i < adj.n; ++i) {
    inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(adj.row_offsets[i + 1] - adj.row_offsets[i]));
  }

  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(adj.n, adj.n);
  for (i64 i = 0; i < adj.n; ++i) {
    for (i64 e = adj.row_offsets[i]; e < adj.row_offsets[i + 1]; ++e) {
      const NodeId j = adj.col_indices[e];
      s(i, j) = inv_sqrt[i] * inv_sqrt[j];
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  require(es.info() == Eigen::Success, Errc::numeric, "second_eigenvalue: eigensolver failed");
  double l2 = es.eigenvalues()(adj.n - 2);  // ascending order
  return std::clamp(l2, -1.0, 1.0);
}

}  // namespace nai
