#include "nai/engine.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_set>

namespace nai {

void InferencePolicy::validate(i64 k) const {
  require(k >= 1, Errc::invalid_argument, "policy: depth budget must be positive");
  require(t_min >= 1 && t_min <= t_max && t_max <= k, Errc::invalid_argument,
          "policy: need 1 <= t_min <= t_max <= depth budget");
  if (mode == PolicyMode::Distance)
    require(ts >= 0.0, Errc::invalid_argument, "policy: negative distance threshold");
}

namespace {

void check_batch(std::span<const i64> batch, i64 n) {
  require(!batch.empty(), Errc::invalid_argument, "infer: empty batch");
  std::unordered_set<i64> seen;
  seen.reserve(batch.size());
  for (i64 id : batch) {
    require(id >= 0 && id < n, Errc::invalid_argument, "infer: batch node outside graph");
    require(seen.insert(id).second, Errc::invalid_argument, "infer: duplicate batch node");
  }
}

i64 row_nnz(const NormalizedAdjacency& adj, i64 r) {
  return adj.row_offsets[r + 1] - adj.row_offsets[r];
}

// Classify the depth-d bucket in one dense pass and scatter the results back
// into batch order.
void classify_bucket(const ModelBundle& bundle, std::span<const Matrix> stack_local,
                     const std::vector<i64>& local_row, std::span<const i64> bucket, i64 d,
                     MacLedger& ledger, PredictionReport& rep) {
  std::vector<i64> rows(bucket.size());
  for (std::size_t j = 0; j < bucket.size(); ++j) rows[j] = local_row[bucket[j]];
  Matrix in;
  combine_rows(bundle.stack.mode, bundle.s2gc_divisor_plus_one, stack_local, d, rows, in);
  const DenseParams& net = bundle.stack.net(d);
  Matrix logits = forward(net, in, false, nullptr);
  for (const Matrix& w : net.weights)
    ledger.add(Phase::classification, count_dense(in.rows, w.rows, w.cols));
  std::vector<double> prob(static_cast<std::size_t>(logits.cols));
  for (i64 r = 0; r < logits.rows; ++r) {
    softmax_t(logits.row(r), logits.cols, 1.0, prob.data());
    const i64 cls = argmax_index(prob.data(), logits.cols);
    const i64 p = bucket[static_cast<std::size_t>(r)];
    rep.predicted[p] = cls;
    rep.max_prob[p] = prob[static_cast<std::size_t>(cls)];
  }
}

}  // namespace

PredictionReport infer_batch(const ModelBundle& bundle, const Graph& g,
                             const NormalizedAdjacency& adj, const Matrix& x,
                             std::span<const i64> batch, const InferencePolicy& policy) {
  const ClassifierStack& stack = bundle.stack;
  policy.validate(stack.k);
  require(adj.n == g.n, Errc::invalid_argument, "infer: adjacency built for a different graph");
  require(adj.gamma == bundle.gamma, Errc::invalid_argument,
          "infer: adjacency normalized at a different gamma");
  require(x.rows == g.n && x.cols == stack.f, Errc::invalid_argument,
          "infer: feature matrix shape mismatch");
  check_batch(batch, g.n);

  const i64 t_min = policy.t_min;
  const i64 t_max = policy.t_max;
  const i64 f = stack.f;
  const i64 nb = static_cast<i64>(batch.size());
  const bool adaptive = policy.mode != PolicyMode::FixedDepth;

  const i64 first_used = adaptive ? t_min : t_max;
  for (i64 d = first_used; d <= t_max; ++d)
    require(stack.is_trained(d), Errc::state, "infer: classifier not trained at a reachable depth");
  if (policy.mode == PolicyMode::Gate) {
    require(bundle.gates.trained, Errc::state, "infer: gate stack not trained");
    require(bundle.gates.k == stack.k && bundle.gates.f == stack.f, Errc::invalid_argument,
            "infer: gate stack shaped for a different model");
  }

  PredictionReport rep;
  rep.ledger.stationary_mode = policy.stationary_count;
  rep.nodes.assign(batch.begin(), batch.end());
  rep.exit_depth.assign(batch.size(), 0);
  rep.predicted.assign(batch.size(), -1);
  rep.max_prob.assign(batch.size(), 0.0);
  rep.histogram.assign(static_cast<std::size_t>(stack.k), 0);
  rep.trace.rows_per_depth.assign(static_cast<std::size_t>(t_max), 0);
  rep.trace.nnz_per_depth.assign(static_cast<std::size_t>(t_max), 0);
  rep.trace.tested_per_depth.assign(static_cast<std::size_t>(t_max), 0);
  rep.trace.batch_size = nb;

  FrontierCone cone;
  {
    PhaseTimer timer(rep.times, Phase::sampling);
    cone = k_hop_frontier(g, batch, t_max);
  }
  const std::vector<i64>& cone_nodes = cone.widest();
  const i64 cone_size = static_cast<i64>(cone_nodes.size());
  rep.trace.cone_width = cone_size;

  std::vector<i64> local_of(static_cast<std::size_t>(g.n), -1);
  for (i64 i = 0; i < cone_size; ++i) local_of[static_cast<std::size_t>(cone_nodes[i])] = i;
  std::vector<i64> local_row(batch.size());  // batch position -> cone row
  for (std::size_t p = 0; p < batch.size(); ++p) local_row[p] = local_of[static_cast<std::size_t>(batch[p])];

  Matrix x_inf;  // batch rows, input order
  if (adaptive) {
    PhaseTimer timer(rep.times, Phase::stationary);
    StationaryState st = stationary(g, x, bundle.gamma);
    x_inf = st.expand(batch);
    rep.ledger.add(Phase::stationary, count_stationary(g.n, f, nb, policy.stationary_count));
  }

  // Cone-local depth stack. Rows outside a depth's schedule stay zero and are
  // never read: the schedule at depth l covers every node still reachable
  // from a live batch node in the remaining t_max - l hops.
  std::vector<Matrix> stack_local;
  stack_local.reserve(static_cast<std::size_t>(t_max) + 1);
  for (i64 l = 0; l <= t_max; ++l) stack_local.emplace_back(cone_size, f);
  {
    PhaseTimer timer(rep.times, Phase::propagation);
    for (i64 i = 0; i < cone_size; ++i)
      std::copy(x.row(cone_nodes[i]), x.row(cone_nodes[i]) + f, stack_local[0].row(i));
  }

  std::vector<char> alive(batch.size(), 1);
  std::vector<std::vector<i64>> buckets(static_cast<std::size_t>(t_max) + 1);  // batch positions per exit depth
  i64 alive_count = nb;

  std::vector<i64> survivors;  // scratch, global ids sorted
  for (i64 l = 1; l <= t_max && alive_count > 0; ++l) {
    const std::vector<i64>* rows = &cone.layers[static_cast<std::size_t>(t_max - l)];
    std::vector<i64> shrunk;
    if (l == t_max || policy.shrink_cone) {
      survivors.clear();
      for (std::size_t p = 0; p < batch.size(); ++p)
        if (alive[p]) survivors.push_back(batch[p]);
      std::sort(survivors.begin(), survivors.end());
    }
    if (l == t_max) {
      // Radius zero: only the remaining batch rows themselves are needed.
      rows = &survivors;
    } else if (policy.shrink_cone) {
      PhaseTimer timer(rep.times, Phase::sampling);
      FrontierCone sub = k_hop_frontier(g, survivors, t_max - l);
      shrunk = std::move(sub.layers.back());
      rows = &shrunk;
    }

    {
      PhaseTimer timer(rep.times, Phase::propagation);
      const Matrix& prev = stack_local[static_cast<std::size_t>(l - 1)];
      Matrix& next = stack_local[static_cast<std::size_t>(l)];
      i64 nnz = 0;
      for (i64 r : *rows) {
        spmm_row_into(adj, r, prev, local_of.data(), next.row(local_of[static_cast<std::size_t>(r)]));
        nnz += row_nnz(adj, r);
      }
      rep.ledger.add(Phase::propagation, count_spmm(nnz, f));
      rep.trace.rows_per_depth[static_cast<std::size_t>(l - 1)] = static_cast<i64>(rows->size());
      rep.trace.nnz_per_depth[static_cast<std::size_t>(l - 1)] = nnz;
    }

    if (adaptive && l >= t_min && l < t_max) {
      PhaseTimer timer(rep.times, Phase::distance_or_gate);
      const Matrix& cur = stack_local[static_cast<std::size_t>(l)];
      i64 tested = 0;
      for (std::size_t p = 0; p < batch.size(); ++p) {
        if (!alive[p]) continue;
        const double* xl = cur.row(local_row[p]);
        bool exit_now = false;
        if (policy.mode == PolicyMode::Distance) {
          exit_now = distance(xl, x_inf.row(static_cast<i64>(p)), f) < policy.ts;
          rep.ledger.add(Phase::distance_or_gate, f);
        } else {
          double e[2], mask[2];
          gate_forward(bundle.gates.gate(l), {xl, static_cast<std::size_t>(f)},
                       {x_inf.row(static_cast<i64>(p)), static_cast<std::size_t>(f)},
                       0.0, false, 1.0, nullptr, e, mask);
          exit_now = mask[0] == 1.0;
          rep.ledger.add(Phase::distance_or_gate, 4 * f);
        }
        ++tested;
        if (exit_now) {
          alive[p] = 0;
          --alive_count;
          rep.exit_depth[p] = l;
          buckets[static_cast<std::size_t>(l)].push_back(static_cast<i64>(p));
        }
      }
      rep.trace.tested_per_depth[static_cast<std::size_t>(l - 1)] = tested;
    }

    if (l == t_max) {
      for (std::size_t p = 0; p < batch.size(); ++p) {
        if (!alive[p]) continue;
        alive[p] = 0;
        rep.exit_depth[p] = t_max;
        buckets[static_cast<std::size_t>(t_max)].push_back(static_cast<i64>(p));
      }
      alive_count = 0;
    }
  }

  {
    PhaseTimer timer(rep.times, Phase::classification);
    std::span<const Matrix> stack_span(stack_local.data(), stack_local.size());
    for (i64 d = 1; d <= t_max; ++d) {
      const std::vector<i64>& bucket = buckets[static_cast<std::size_t>(d)];
      if (bucket.empty()) continue;
      classify_bucket(bundle, stack_span, local_row, bucket, d, rep.ledger, rep);
      rep.histogram[static_cast<std::size_t>(d - 1)] = static_cast<i64>(bucket.size());
    }
  }
  return rep;
}

void write_predictions(const PredictionReport& report, const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "w");
  require(fp != nullptr, Errc::io, "cannot open prediction file for writing");
  std::fprintf(fp, "node_id,exit_depth,predicted_class,max_prob\n");
  for (std::size_t i = 0; i < report.nodes.size(); ++i)
    std::fprintf(fp, "%lld,%lld,%lld,%.17g\n", static_cast<long long>(report.nodes[i]),
                 static_cast<long long>(report.exit_depth[i]),
                 static_cast<long long>(report.predicted[i]), report.max_prob[i]);
  std::fclose(fp);
}

}  // namespace nai
