#pragma once
// Shared helpers for the test suites: small random graph generators and
// brute-force reference computations.

#include <queue>
#include <utility>
#include <vector>

#include "nai/common.hpp"
#include "nai/graph.hpp"

namespace nai::test {

inline Graph er_graph(i64 n, double p, Rng& rng) {
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (i64 i = 0; i < n; ++i)
    for (i64 j = i + 1; j < n; ++j)
      if (rng.uniform() < p) edges.emplace_back(i, j);
  return build_graph(edges, n);
}

inline bool is_connected(const Graph& g) {
  if (g.n == 0) return false;
  std::vector<char> seen(g.n, 0);
  std::queue<NodeId> q;
  q.push(0);
  seen[0] = 1;
  i64 found = 1;
  while (!q.empty()) {
    NodeId u = q.front();
    q.pop();
    for (NodeId v : g.neighbors(u)) {
      if (!seen[v]) {
        seen[v] = 1;
        ++found;
        q.push(v);
      }
    }
  }
  return found == g.n;
}

inline Graph connected_er_graph(i64 n, double p, Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Graph g = er_graph(n, p, rng);
    if (is_connected(g)) return g;
  }
  fail(Errc::state, "connected_er_graph: no connected sample after 1000 draws");
}

// Hop distances from every source; -1 where unreachable.
inline std::vector<std::vector<i64>> all_pairs_bfs(const Graph& g) {
  std::vector<std::vector<i64>> dist(g.n, std::vector<i64>(g.n, -1));
  for (NodeId s = 0; s < g.n; ++s) {
    std::queue<NodeId> q;
    dist[s][s] = 0;
    q.push(s);
    while (!q.empty()) {
      NodeId u = q.front();
      q.pop();
      for (NodeId v : g.neighbors(u)) {
        if (dist[s][v] < 0) {
          dist[s][v] = dist[s][u] + 1;
          q.push(v);
        }
      }
    }
  }
  return dist;
}

inline Matrix random_features(i64 n, i64 f, Rng& rng, double scale = 1.0) {
  Matrix x(n, f);
  for (double& v : x.data) v = scale * rng.normal();
  return x;
}

// Rows scaled to unit Euclidean norm (zero rows left alone).
inline Matrix unit_row_features(i64 n, i64 f, Rng& rng) {
  Matrix x = random_features(n, f, rng);
  for (i64 i = 0; i < n; ++i) {
    double s = 0.0;
    for (i64 j = 0; j < f; ++j) s += x.at(i, j) * x.at(i, j);
    if (s > 0.0) {
      const double inv = 1.0 / std::sqrt(s);
      for (i64 j = 0; j < f; ++j) x.at(i, j) *= inv;
    }
  }
  return x;
}

// Dense n x n matrix of the normalized operator, for brute-force references.
inline Matrix dense_adjacency(const NormalizedAdjacency& adj) {
  Matrix a(adj.n, adj.n);
  for (i64 i = 0; i < adj.n; ++i)
    for (i64 e = adj.row_offsets[i]; e < adj.row_offsets[i + 1]; ++e)
      a.at(i, adj.col_indices[e]) = adj.values[e];
  return a;
}

}  // namespace nai::test
