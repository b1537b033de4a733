#include "nai/engine.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "nai/propagation.hpp"
#include "util.hpp"

using namespace nai;
using test::connected_er_graph;
using test::er_graph;
using test::random_features;

namespace {

// Stack with freshly initialized linear heads at every depth, flagged usable.
ModelBundle make_bundle(CombineMode mode, i64 k, i64 f, i64 c, Rng& rng, double gamma = 0.5) {
  ModelBundle b;
  b.stack = make_stack(mode, k, f, c, 0, 0.0, rng);
  for (i64 d = 1; d <= k; ++d) b.stack.mark_trained(d);
  b.gamma = gamma;
  return b;
}

std::vector<i64> pick_batch(i64 n, i64 count, Rng& rng) {
  std::vector<i64> ids(n);
  for (i64 i = 0; i < n; ++i) ids[i] = i;
  rng.shuffle(ids);
  ids.resize(count);
  return ids;
}

// Full-graph replay of the adaptive loop: propagate everywhere, apply the
// per-node exit rule, classify each node at its own depth.
struct RefRun {
  std::vector<i64> exit_depth;
  std::vector<i64> predicted;
  std::vector<double> max_prob;
};

RefRun reference_run(const ModelBundle& bundle, const Graph& g, const NormalizedAdjacency& adj,
                     const Matrix& x, std::span<const i64> batch, const InferencePolicy& policy) {
  DepthFeatures df = precompute_depths(adj, x, policy.t_max, bundle.stack.mode);
  df.s2gc_divisor_plus_one = bundle.s2gc_divisor_plus_one;
  StationaryState st = stationary(g, x, bundle.gamma);
  Matrix x_inf = st.expand(batch);

  RefRun ref;
  for (std::size_t p = 0; p < batch.size(); ++p) {
    const i64 node = batch[p];
    i64 ex = policy.t_max;
    for (i64 l = policy.t_min; l < policy.t_max && policy.mode != PolicyMode::FixedDepth; ++l) {
      bool out = false;
      if (policy.mode == PolicyMode::Distance) {
        out = distance(df.stack[l].row(node), x_inf.row(static_cast<i64>(p)), x.cols) < policy.ts;
      } else {
        double e[2], mask[2];
        gate_forward(bundle.gates.gate(l), {df.stack[l].row(node), static_cast<std::size_t>(x.cols)},
                     {x_inf.row(static_cast<i64>(p)), static_cast<std::size_t>(x.cols)}, 0.0, false,
                     1.0, nullptr, e, mask);
        out = mask[0] == 1.0;
      }
      if (out) {
        ex = l;
        break;
      }
    }
    Matrix combined = combine(df, ex);
    Matrix probs = predict(bundle.stack.net(ex), combined);
    const i64 cls = argmax_index(probs.row(node), probs.cols);
    ref.exit_depth.push_back(ex);
    ref.predicted.push_back(cls);
    ref.max_prob.push_back(probs.at(node, cls));
  }
  return ref;
}

void check_against_reference(const PredictionReport& rep, const RefRun& ref) {
  REQUIRE(rep.exit_depth.size() == ref.exit_depth.size());
  for (std::size_t p = 0; p < ref.exit_depth.size(); ++p) {
    CHECK(rep.exit_depth[p] == ref.exit_depth[p]);
    CHECK(rep.predicted[p] == ref.predicted[p]);
    CHECK(rep.max_prob[p] == ref.max_prob[p]);  // bit-identical, not approximate
  }
}

}  // namespace

TEST_CASE("fixed-depth cone inference is bit-identical to the full-graph pass") {
  Rng rng(900);
  const CombineMode modes[3] = {CombineMode::SGC, CombineMode::SIGN, CombineMode::S2GC};
  for (int trial = 0; trial < 20; ++trial) {
    const i64 n = 20 + rng.below(60);
    Graph g = er_graph(n, 0.08, rng);
    Matrix x = random_features(n, 5, rng);
    ModelBundle bundle = make_bundle(modes[trial % 3], 4, 5, 3, rng);
    bundle.s2gc_divisor_plus_one = trial % 6 >= 3;
    NormalizedAdjacency adj = normalize(g, bundle.gamma);
    std::vector<i64> batch = pick_batch(n, 1 + rng.below(std::min<i64>(n, 12)), rng);

    InferencePolicy policy;
    policy.mode = PolicyMode::FixedDepth;
    policy.t_min = 4;
    policy.t_max = 4;
    PredictionReport rep = infer_batch(bundle, g, adj, x, batch, policy);
    check_against_reference(rep, reference_run(bundle, g, adj, x, batch, policy));
    CHECK(rep.ledger.phase(Phase::stationary) == 0);
    CHECK(rep.ledger.phase(Phase::distance_or_gate) == 0);
  }
}

TEST_CASE("distance-policy exits match the full-graph replay bit for bit") {
  Rng rng(901);
  for (int trial = 0; trial < 12; ++trial) {
    const i64 n = 30 + rng.below(80);
    Graph g = er_graph(n, 0.07, rng);
    Matrix x = random_features(n, 6, rng);
    ModelBundle bundle = make_bundle(CombineMode::SGC, 5, 6, 4, rng);
    NormalizedAdjacency adj = normalize(g, bundle.gamma);
    std::vector<i64> batch = pick_batch(n, 10, rng);

    // Aim the threshold at the middle of the depth-1 gap distribution so the
    // batch genuinely splits across depths.
    StationaryState st = stationary(g, x, bundle.gamma);
    Matrix x1 = spmm_step(adj, x);
    std::vector<double> gaps;
    for (i64 id : batch) {
      std::vector<double> row(static_cast<std::size_t>(x.cols));
      st.expand_row(id, row.data());
      gaps.push_back(distance(x1.row(id), row.data(), x.cols));
    }
    std::sort(gaps.begin(), gaps.end());
    InferencePolicy policy;
    policy.mode = PolicyMode::Distance;
    policy.ts = gaps[gaps.size() / 2];
    policy.t_min = 1;
    policy.t_max = 5;
    PredictionReport rep = infer_batch(bundle, g, adj, x, batch, policy);
    check_against_reference(rep, reference_run(bundle, g, adj, x, batch, policy));
  }
}

TEST_CASE("report partitions the batch and the histogram adds up") {
  Rng rng(902);
  Graph g = connected_er_graph(60, 0.08, rng);
  Matrix x = random_features(60, 4, rng);
  ModelBundle bundle = make_bundle(CombineMode::SIGN, 4, 4, 3, rng);
  NormalizedAdjacency adj = normalize(g, bundle.gamma);
  std::vector<i64> batch = pick_batch(60, 25, rng);

  InferencePolicy policy;
  policy.mode = PolicyMode::Distance;
  policy.ts = 0.8;
  policy.t_min = 2;
  policy.t_max = 4;
  PredictionReport rep = infer_batch(bundle, g, adj, x, batch, policy);

  REQUIRE(rep.nodes.size() == batch.size());
  REQUIRE(rep.histogram.size() == 4);
  i64 total = 0;
  for (i64 h : rep.histogram) total += h;
  CHECK(total == static_cast<i64>(batch.size()));
  CHECK(rep.histogram[0] == 0);  // below t_min nothing may exit
  for (std::size_t p = 0; p < batch.size(); ++p) {
    CHECK(rep.exit_depth[p] >= 2);
    CHECK(rep.exit_depth[p] <= 4);
    CHECK(rep.predicted[p] >= 0);
    CHECK(rep.predicted[p] < 3);
    CHECK(rep.max_prob[p] > 0.0);
    CHECK(rep.max_prob[p] <= 1.0);
  }
  CHECK(rep.trace.tested_per_depth[0] == 0);
  CHECK(rep.trace.tested_per_depth[1] == static_cast<i64>(batch.size()));
}

TEST_CASE("a huge threshold exits everyone at t_min, a zero threshold never exits early") {
  Rng rng(903);
  Graph g = connected_er_graph(40, 0.1, rng);
  Matrix x = random_features(40, 5, rng);
  ModelBundle bundle = make_bundle(CombineMode::SGC, 4, 5, 3, rng);
  NormalizedAdjacency adj = normalize(g, bundle.gamma);
  std::vector<i64> batch = pick_batch(40, 15, rng);

  InferencePolicy policy;
  policy.mode = PolicyMode::Distance;
  policy.t_min = 2;
  policy.t_max = 4;

  policy.ts = 1e18;
  PredictionReport all_min = infer_batch(bundle, g, adj, x, batch, policy);
  for (i64 d : all_min.exit_depth) CHECK(d == 2);
  CHECK(all_min.histogram[1] == 15);
  // Everyone left at depth 2, so depths 3 and 4 were never propagated.
  CHECK(all_min.trace.rows_per_depth[2] == 0);
  CHECK(all_min.trace.rows_per_depth[3] == 0);

  policy.ts = 0.0;  // strict comparison: 0 < 0 fails, nothing exits early
  PredictionReport none = infer_batch(bundle, g, adj, x, batch, policy);
  for (i64 d : none.exit_depth) CHECK(d == 4);
  CHECK(none.histogram[3] == 15);
}

TEST_CASE("one propagation step on a triangle already reaches the stationary point") {
  Graph g = build_graph(std::vector<std::pair<NodeId, NodeId>>{{0, 1}, {1, 2}, {0, 2}}, 3);
  Rng rng(904);
  Matrix x = random_features(3, 4, rng);
  ModelBundle bundle = make_bundle(CombineMode::SGC, 3, 4, 2, rng);
  NormalizedAdjacency adj = normalize(g, bundle.gamma);
  std::vector<i64> batch{0, 1, 2};

  InferencePolicy policy;
  policy.mode = PolicyMode::Distance;
  policy.ts = 1e-6;
  policy.t_min = 1;
  policy.t_max = 3;
  PredictionReport rep = infer_batch(bundle, g, adj, x, batch, policy);
  for (i64 d : rep.exit_depth) CHECK(d == 1);
}

TEST_CASE("early exits only ever cut feature-processing cost") {
  Rng rng(905);
  Graph g = connected_er_graph(80, 0.06, rng);
  Matrix x = random_features(80, 6, rng);
  ModelBundle bundle = make_bundle(CombineMode::SGC, 5, 6, 3, rng);
  NormalizedAdjacency adj = normalize(g, bundle.gamma);
  std::vector<i64> batch = pick_batch(80, 20, rng);

  InferencePolicy fixed;
  fixed.mode = PolicyMode::FixedDepth;
  fixed.t_min = 5;
  fixed.t_max = 5;
  const i64 fixed_fp = infer_batch(bundle, g, adj, x, batch, fixed).ledger.fp();

  InferencePolicy adaptive;
  adaptive.mode = PolicyMode::Distance;
  adaptive.t_min = 1;
  adaptive.t_max = 5;
  for (double ts : {1e18, 1.5, 0.8, 0.3}) {
    adaptive.ts = ts;
    PredictionReport rep = infer_batch(bundle, g, adj, x, batch, adaptive);
    // Propagation alone can only shrink: per-depth row sets are subsets of
    // the fixed schedule and exhausted batches stop the loop entirely.
    CHECK(rep.ledger.phase(Phase::propagation) <= fixed_fp);
    i64 exited_early = 0;
    for (i64 d : rep.exit_depth) exited_early += d < 5 ? 1 : 0;
    if (exited_early == 20) CHECK(rep.ledger.fp() < fixed_fp);
  }

  // Degenerate corner, kept visible on purpose: when nothing ever exits
  // early the run pays the full fixed-depth propagation plus the tests, so
  // end-to-end dominance needs actual exits (the operating regime).
  adaptive.ts = 0.0;
  PredictionReport stubborn = infer_batch(bundle, g, adj, x, batch, adaptive);
  CHECK(stubborn.ledger.phase(Phase::propagation) == fixed_fp);
  CHECK(stubborn.ledger.fp() ==
        fixed_fp + stubborn.ledger.phase(Phase::distance_or_gate));
}

TEST_CASE("ledger matches the closed-form counts when the batch is the whole graph") {
  Rng rng(906);
  const i64 n = 50, f = 7, c = 4, k = 3;
  Graph g = er_graph(n, 0.1, rng);
  Matrix x = random_features(n, f, rng);
  ModelBundle bundle = make_bundle(CombineMode::SGC, k, f, c, rng);
  NormalizedAdjacency adj = normalize(g, bundle.gamma);
  std::vector<i64> batch(n);
  for (i64 i = 0; i < n; ++i) batch[i] = i;

  InferencePolicy policy;
  policy.mode = PolicyMode::FixedDepth;
  policy.t_min = k;
  policy.t_max = k;
  PredictionReport rep = infer_batch(bundle, g, adj, x, batch, policy);

  // Full-batch fixed depth degenerates to the classical pipeline: k sparse
  // passes over every stored entry plus one dense head over every node.
  CHECK(rep.ledger.phase(Phase::propagation) == k * (2 * g.m + g.n) * f);
  CHECK(rep.ledger.phase(Phase::classification) == n * f * c);
  CHECK(rep.ledger.phase(Phase::stationary) == 0);
  CHECK(rep.ledger.phase(Phase::distance_or_gate) == 0);
  CHECK(rep.ledger.total() == rep.ledger.fp() + rep.ledger.phase(Phase::classification));
  CHECK(rep.trace.cone_width == n);

  // Adaptive accounting: factorized stationary, one distance test per
  // survivor per tested depth.
  InferencePolicy dist;
  dist.mode = PolicyMode::Distance;
  dist.ts = 0.0;
  dist.t_min = 1;
  dist.t_max = k;
  PredictionReport rd = infer_batch(bundle, g, adj, x, batch, dist);
  CHECK(rd.ledger.phase(Phase::stationary) == n * f + n * f);
  i64 tested = 0;
  for (i64 t : rd.trace.tested_per_depth) tested += t;
  CHECK(rd.ledger.phase(Phase::distance_or_gate) == tested * f);

  dist.stationary_count = StationaryCount::naive;
  PredictionReport rn = infer_batch(bundle, g, adj, x, batch, dist);
  CHECK(rn.ledger.phase(Phase::stationary) == static_cast<i64>(n) * n * f);
  CHECK(rn.ledger.stationary_mode == StationaryCount::naive);
}

TEST_CASE("cone schedule covers exactly the reachable rows") {
  Rng rng(907);
  Graph g = er_graph(70, 0.05, rng);
  Matrix x = random_features(70, 4, rng);
  ModelBundle bundle = make_bundle(CombineMode::SGC, 3, 4, 3, rng);
  NormalizedAdjacency adj = normalize(g, bundle.gamma);
  std::vector<i64> batch = pick_batch(70, 6, rng);

  InferencePolicy policy;
  policy.mode = PolicyMode::FixedDepth;
  policy.t_min = 3;
  policy.t_max = 3;
  PredictionReport rep = infer_batch(bundle, g, adj, x, batch, policy);

  FrontierCone cone = k_hop_frontier(g, batch, 3);
  CHECK(rep.trace.cone_width == static_cast<i64>(cone.widest().size()));
  CHECK(rep.trace.rows_per_depth[0] == static_cast<i64>(cone.layers[2].size()));
  CHECK(rep.trace.rows_per_depth[1] == static_cast<i64>(cone.layers[1].size()));
  CHECK(rep.trace.rows_per_depth[2] == static_cast<i64>(batch.size()));
  i64 nnz0 = 0;
  for (i64 r : cone.layers[2]) nnz0 += adj.row_offsets[r + 1] - adj.row_offsets[r];
  CHECK(rep.trace.nnz_per_depth[0] == nnz0);
}

TEST_CASE("shrinking the cone changes costs but never predictions") {
  Rng rng(908);
  for (int trial = 0; trial < 6; ++trial) {
    const i64 n = 60 + rng.below(60);
    Graph g = er_graph(n, 0.06, rng);
    Matrix x = random_features(n, 5, rng);
    ModelBundle bundle = make_bundle(CombineMode::S2GC, 5, 5, 3, rng);
    NormalizedAdjacency adj = normalize(g, bundle.gamma);
    std::vector<i64> batch = pick_batch(n, 12, rng);

    InferencePolicy policy;
    policy.mode = PolicyMode::Distance;
    policy.ts = 1.0;
    policy.t_min = 1;
    policy.t_max = 5;
    PredictionReport plain = infer_batch(bundle, g, adj, x, batch, policy);
    policy.shrink_cone = true;
    PredictionReport shrunk = infer_batch(bundle, g, adj, x, batch, policy);

    for (std::size_t p = 0; p < batch.size(); ++p) {
      CHECK(plain.exit_depth[p] == shrunk.exit_depth[p]);
      CHECK(plain.predicted[p] == shrunk.predicted[p]);
      CHECK(plain.max_prob[p] == shrunk.max_prob[p]);
    }
    CHECK(shrunk.ledger.phase(Phase::propagation) <= plain.ledger.phase(Phase::propagation));
    CHECK(shrunk.ledger.phase(Phase::distance_or_gate) ==
          plain.ledger.phase(Phase::distance_or_gate));
    for (std::size_t l = 0; l < 5; ++l)
      CHECK(shrunk.trace.rows_per_depth[l] <= plain.trace.rows_per_depth[l]);
  }
}

TEST_CASE("gate policy routes by the inference-time gate decision") {
  Rng rng(909);
  const i64 n = 50, f = 4, c = 3, k = 4;
  Graph g = connected_er_graph(n, 0.08, rng);
  Matrix x = random_features(n, f, rng);
  for (double& v : x.data) v = std::abs(v) + 1.0;  // keep propagated rows positive
  ModelBundle bundle = make_bundle(CombineMode::SGC, k, f, c, rng);
  NormalizedAdjacency adj = normalize(g, bundle.gamma);
  std::vector<i64> batch = pick_batch(n, 18, rng);

  bundle.gates = make_gates(k, f, rng);
  bundle.gates.trained = true;

  InferencePolicy policy;
  policy.mode = PolicyMode::Gate;
  policy.t_min = 1;
  policy.t_max = k;

  // All-zero gates score a tie and the tie selects: everyone leaves at t_min.
  for (Matrix& w : bundle.gates.w) std::fill(w.data.begin(), w.data.end(), 0.0);
  PredictionReport eager = infer_batch(bundle, g, adj, x, batch, policy);
  for (i64 d : eager.exit_depth) CHECK(d == 1);
  CHECK(eager.ledger.phase(Phase::distance_or_gate) == static_cast<i64>(batch.size()) * 4 * f);

  // Pushing the keep-going score up on positive features defers everyone.
  for (Matrix& w : bundle.gates.w) {
    std::fill(w.data.begin(), w.data.end(), 0.0);
    for (i64 r = 0; r < f; ++r) w.at(r, 1) = 3.0;
  }
  PredictionReport lazy = infer_batch(bundle, g, adj, x, batch, policy);
  for (i64 d : lazy.exit_depth) CHECK(d == k);
  check_against_reference(lazy, reference_run(bundle, g, adj, x, batch, policy));

  // Mixed gates still agree with the full-graph replay.
  Rng grng(910);
  bundle.gates = make_gates(k, f, grng);
  bundle.gates.trained = true;
  for (Matrix& w : bundle.gates.w)
    for (double& v : w.data) v = grng.normal();
  PredictionReport mixed = infer_batch(bundle, g, adj, x, batch, policy);
  check_against_reference(mixed, reference_run(bundle, g, adj, x, batch, policy));
}

TEST_CASE("two identical calls produce identical reports") {
  Rng rng(911);
  Graph g = connected_er_graph(45, 0.09, rng);
  Matrix x = random_features(45, 5, rng);
  ModelBundle bundle = make_bundle(CombineMode::SIGN, 4, 5, 3, rng);
  NormalizedAdjacency adj = normalize(g, bundle.gamma);
  std::vector<i64> batch = pick_batch(45, 14, rng);

  InferencePolicy policy;
  policy.mode = PolicyMode::Distance;
  policy.ts = 0.7;
  policy.t_min = 1;
  policy.t_max = 4;
  PredictionReport a = infer_batch(bundle, g, adj, x, batch, policy);
  PredictionReport b = infer_batch(bundle, g, adj, x, batch, policy);
  CHECK(a.exit_depth == b.exit_depth);
  CHECK(a.predicted == b.predicted);
  CHECK(a.max_prob == b.max_prob);
  CHECK(a.ledger.macs == b.ledger.macs);
  CHECK(a.trace.nnz_per_depth == b.trace.nnz_per_depth);
}

TEST_CASE("invalid policies and batches are rejected") {
  Rng rng(912);
  Graph g = connected_er_graph(20, 0.15, rng);
  Matrix x = random_features(20, 3, rng);
  ModelBundle bundle = make_bundle(CombineMode::SGC, 3, 3, 2, rng);
  NormalizedAdjacency adj = normalize(g, bundle.gamma);
  std::vector<i64> batch{0, 1, 2};

  InferencePolicy policy;
  policy.mode = PolicyMode::Distance;
  policy.ts = 0.5;
  policy.t_min = 1;
  policy.t_max = 3;

  InferencePolicy bad = policy;
  bad.t_min = 0;
  CHECK_THROWS_AS(infer_batch(bundle, g, adj, x, batch, bad), Error);
  bad = policy;
  bad.t_max = 4;
  CHECK_THROWS_AS(infer_batch(bundle, g, adj, x, batch, bad), Error);
  bad = policy;
  bad.t_min = 3;
  bad.t_max = 2;
  CHECK_THROWS_AS(infer_batch(bundle, g, adj, x, batch, bad), Error);
  bad = policy;
  bad.ts = -1.0;
  CHECK_THROWS_AS(infer_batch(bundle, g, adj, x, batch, bad), Error);

  std::vector<i64> outside{0, 25};
  CHECK_THROWS_AS(infer_batch(bundle, g, adj, x, outside, policy), Error);
  std::vector<i64> dup{0, 0};
  CHECK_THROWS_AS(infer_batch(bundle, g, adj, x, dup, policy), Error);
  std::vector<i64> empty;
  CHECK_THROWS_AS(infer_batch(bundle, g, adj, x, empty, policy), Error);

  InferencePolicy gate = policy;
  gate.mode = PolicyMode::Gate;
  CHECK_THROWS_AS(infer_batch(bundle, g, adj, x, batch, gate), Error);  // no trained gates

  ModelBundle untrained = bundle;
  untrained.stack.trained.assign(untrained.stack.trained.size(), 0);
  CHECK_THROWS_AS(infer_batch(untrained, g, adj, x, batch, policy), Error);

  NormalizedAdjacency other = normalize(g, 0.3);
  CHECK_THROWS_AS(infer_batch(bundle, g, other, x, batch, policy), Error);

  Matrix narrow = random_features(20, 2, rng);
  CHECK_THROWS_AS(infer_batch(bundle, g, adj, narrow, batch, policy), Error);
}

TEST_CASE("prediction dump writes one labeled row per node") {
  Rng rng(913);
  Graph g = connected_er_graph(25, 0.12, rng);
  Matrix x = random_features(25, 4, rng);
  ModelBundle bundle = make_bundle(CombineMode::SGC, 3, 4, 3, rng);
  NormalizedAdjacency adj = normalize(g, bundle.gamma);
  std::vector<i64> batch{3, 7, 11, 19};

  InferencePolicy policy;
  policy.mode = PolicyMode::Distance;
  policy.ts = 0.5;
  policy.t_min = 1;
  policy.t_max = 3;
  PredictionReport rep = infer_batch(bundle, g, adj, x, batch, policy);

  const std::string path = "/tmp/nai-test-predictions.csv";
  write_predictions(rep, path);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  CHECK(line == "node_id,exit_depth,predicted_class,max_prob");
  i64 rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 3);
  }
  CHECK(rows == static_cast<i64>(batch.size()));
  std::remove(path.c_str());
}
