#pragma once
// Sparse undirected graph, degree-normalized adjacency, k-hop frontier
// closure, and the dense second-eigenvalue oracle.
//
// Self-loops are a normalization-time view: the stored Graph never contains
// them, and degrees always mean the simple-graph degree. The normalized
// operator works over A~ = A + I with
//
//   value(i, j) = (d_i + 1)^(gamma - 1) * (d_j + 1)^(-gamma)
//
// which is row-stochastic at gamma = 0, symmetric at gamma = 0.5 and
// column-stochastic at gamma = 1.

#include <span>
#include <utility>
#include <vector>

#include "nai/common.hpp"

namespace nai {

using NodeId = i64;

struct Graph {
  i64 n = 0;
  i64 m = 0;  // undirected edge count, self-loops excluded
  std::vector<i64> row_offsets;   // length n+1
  std::vector<NodeId> col_indices;  // length 2m, ascending within each row
  std::vector<i64> degrees;       // degrees[i] == row_offsets[i+1] - row_offsets[i]

  i64 degree(NodeId i) const { return degrees[static_cast<std::size_t>(i)]; }

  std::span<const NodeId> neighbors(NodeId i) const {
    return std::span<const NodeId>(col_indices).subspan(
        static_cast<std::size_t>(row_offsets[i]),
        static_cast<std::size_t>(row_offsets[i + 1] - row_offsets[i]));
  }
};

// Duplicate edges and input self-loops are silently dropped; both directions
// of a pair count as one undirected edge.
Graph build_graph(std::span<const std::pair<NodeId, NodeId>> edges, i64 n);

struct NormalizedAdjacency {
  i64 n = 0;
  double gamma = 0.5;
  // CSR over A~ = A + I: each row additionally carries its diagonal entry.
  std::vector<i64> row_offsets;
  std::vector<NodeId> col_indices;
  std::vector<double> values;

  i64 nnz() const { return static_cast<i64>(col_indices.size()); }
};

NormalizedAdjacency normalize(const Graph& g, double gamma);

struct FrontierCone {
  // layers[t] = N_t, ascending node ids; N_0 = batch, N_t = N_{t-1} union
  // neighbors(N_{t-1}). Layers are cumulative, so N_t contains N_{t-1}.
  std::vector<std::vector<NodeId>> layers;

  i64 depth() const { return static_cast<i64>(layers.size()) - 1; }
  const std::vector<NodeId>& widest() const { return layers.back(); }
};

FrontierCone k_hop_frontier(const Graph& g, std::span<const NodeId> batch, i64 depth);

// Second-largest eigenvalue of the normalized operator. Eigenvalues are
// independent of gamma (similarity transform), so the symmetric form is
// solved regardless of adj.gamma. Dense solver; verification path only.
double second_eigenvalue(const NormalizedAdjacency& adj, i64 dense_cap = 2000);

}  // namespace nai
