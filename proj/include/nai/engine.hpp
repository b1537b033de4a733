#pragma once
// Batched adaptive inference. A batch's propagation cone is sampled once at
// the maximum depth; per-depth rows are then computed pull-style inside the
// cone, each node exits by policy (distance test, gate, or forced at the
// final depth), and exited nodes are routed to their depth's classifier.
// Every multiply-accumulate in this path flows through the ledger.

#include <span>
#include <string>
#include <vector>

#include "nai/classifiers.hpp"
#include "nai/common.hpp"
#include "nai/gates.hpp"
#include "nai/graph.hpp"
#include "nai/metrics.hpp"
#include "nai/propagation.hpp"

namespace nai {

enum class PolicyMode { FixedDepth, Distance, Gate };

struct InferencePolicy {
  PolicyMode mode = PolicyMode::FixedDepth;
  double ts = 0.0;  // distance threshold, strict
  i64 t_min = 1;
  i64 t_max = 1;
  // Recompute the cone around the survivors after each depth. Changes cost
  // only, never predictions.
  bool shrink_cone = false;
  StationaryCount stationary_count = StationaryCount::factorized;

  void validate(i64 k) const;
};

struct ModelBundle {
  ClassifierStack stack;
  GateStack gates;  // consulted only in gate mode
  double gamma = 0.5;
  bool s2gc_divisor_plus_one = false;
};

struct RunTrace {
  std::vector<i64> rows_per_depth;    // SpMM output rows at depth l (index l-1)
  std::vector<i64> nnz_per_depth;     // adjacency entries touched
  std::vector<i64> tested_per_depth;  // exit decisions evaluated
  i64 cone_width = 0;
  i64 batch_size = 0;
};

struct PredictionReport {
  std::vector<i64> nodes;       // batch, input order
  std::vector<i64> exit_depth;  // aligned with nodes
  std::vector<i64> predicted;   // class ids
  std::vector<double> max_prob;
  std::vector<i64> histogram;   // exits per depth 1..k
  MacLedger ledger;
  PhaseTimes times;
  RunTrace trace;
};

// adj must be the normalization of g at bundle.gamma; x holds the full
// feature matrix. batch ids must be unique and in range.
PredictionReport infer_batch(const ModelBundle& bundle, const Graph& g,
                             const NormalizedAdjacency& adj, const Matrix& x,
                             std::span<const i64> batch, const InferencePolicy& policy);

// One record per node: node_id,exit_depth,predicted_class,max_prob.
void write_predictions(const PredictionReport& report, const std::string& path);

}  // namespace nai
