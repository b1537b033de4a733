#include "nai/distill.hpp"

#include <algorithm>
#include <array>
#include <unordered_map>

namespace nai {

i64 DistillConfig::resolve_r(i64 k) const { return r > 0 ? r : std::min<i64>(3, k - 1); }

void DistillConfig::validate(i64 k) const {
  require(T_single > 0.0 && T_multi > 0.0, Errc::invalid_argument, "distill: temperature must be > 0");
  require(lambda_single >= 0.0 && lambda_single <= 1.0 && lambda_multi >= 0.0 && lambda_multi <= 1.0,
          Errc::invalid_argument, "distill: lambda must lie in [0,1]");
  const i64 rr = resolve_r(k);
  require(rr >= 1 && rr <= k, Errc::invalid_argument, "distill: ensemble size r out of range");
  require(epochs_single >= 0 && epochs_multi >= 0, Errc::invalid_argument, "distill: negative epochs");
  require(teacher_loss_weight >= 0.0, Errc::invalid_argument, "distill: negative teacher loss weight");
}

namespace {

// Position of each labeled row inside the distill row set; the labeled
// set must be contained in it.
std::vector<i64> labeled_positions(std::span<const i64> labeled_idx, std::span<const i64> distill_idx) {
  std::unordered_map<i64, i64> pos;
  pos.reserve(distill_idx.size());
  for (std::size_t j = 0; j < distill_idx.size(); ++j) pos.emplace(distill_idx[j], static_cast<i64>(j));
  std::vector<i64> out;
  out.reserve(labeled_idx.size());
  for (i64 id : labeled_idx) {
    auto it = pos.find(id);
    require(it != pos.end(), Errc::invalid_argument, "distill: labeled node missing from distill set");
    out.push_back(it->second);
  }
  return out;
}

Matrix tempered_rows(const Matrix& logits, double T) {
  Matrix out(logits.rows, logits.cols);
  for (i64 r = 0; r < logits.rows; ++r) softmax_t(logits.row(r), logits.cols, T, out.row(r));
  return out;
}

}  // namespace

Var single_scale_loss(Tape& t, const MlpVars& pv, double dropout, const Matrix& x,
                      const Matrix& y_labeled, std::span<const i64> labeled_pos,
                      const Matrix& teacher_target, double T, double lambda, bool train_mode,
                      Rng* rng) {
  Var logits = forward_on_tape(t, pv, dropout, t.input(x), train_mode, rng);
  Var hard = t.cross_entropy_mean(
      t.take_rows(t.softmax_rows(logits, 1.0), {labeled_pos.begin(), labeled_pos.end()}),
      t.input(y_labeled));
  Var soft = t.cross_entropy_mean(t.softmax_rows(logits, T), t.input(teacher_target));
  const std::array<Var, 2> terms{hard, soft};
  const std::array<double, 2> weights{1.0 - lambda, lambda * T * T};
  return t.add_weighted(terms, weights);
}

MultiScaleGraph multi_scale_graph(Tape& t, const ClassifierStack& stack,
                                  std::span<const Matrix> inputs, const Matrix& y_labeled,
                                  std::span<const i64> labeled_pos, const DistillConfig& cfg,
                                  std::vector<Matrix>& s_storage, bool train_mode, Rng* rng) {
  cfg.validate(stack.k);
  const i64 k = stack.k;
  const i64 r = cfg.resolve_r(k);
  const double T = cfg.T_multi;
  const double lambda = cfg.lambda_multi;
  require(static_cast<i64>(inputs.size()) == k, Errc::invalid_argument,
          "multi_scale_graph: need one input matrix per depth");
  require(static_cast<i64>(s_storage.size()) == r, Errc::invalid_argument,
          "multi_scale_graph: need one attention vector per member");

  MultiScaleGraph g;
  const std::vector<i64> lp(labeled_pos.begin(), labeled_pos.end());
  Var y = t.input(y_labeled);

  std::vector<Var> logits;  // depths 1..k-1
  for (i64 l = 1; l < k; ++l) {
    g.students.push_back(lift_params(t, stack.net(l)));
    logits.push_back(forward_on_tape(t, g.students.back(), stack.net(l).dropout,
                                     t.input(inputs[static_cast<std::size_t>(l - 1)]), train_mode, rng));
  }
  MlpVars teacher = lift_params(t, stack.net(k), true);
  Var teacher_logits = forward_on_tape(t, teacher, 0.0,
                                       t.input(inputs[static_cast<std::size_t>(k - 1)]), false, nullptr);

  std::vector<Var> member_probs;
  std::vector<Var> q_cols;
  for (i64 m = 0; m < r; ++m) {
    const i64 depth = k - r + 1 + m;
    Var z = depth == k ? teacher_logits : logits[static_cast<std::size_t>(depth - 1)];
    Var prob = t.softmax_rows(z, 1.0);
    require(s_storage[static_cast<std::size_t>(m)].rows == stack.c &&
                s_storage[static_cast<std::size_t>(m)].cols == 1,
            Errc::invalid_argument, "multi_scale_graph: attention vector must be c x 1");
    g.s_vars.push_back(t.param(s_storage[static_cast<std::size_t>(m)]));
    q_cols.push_back(t.sigmoid(t.matmul(prob, g.s_vars.back())));
    member_probs.push_back(prob);
  }
  Var w = t.softmax_rows(t.concat_cols(q_cols), 1.0);
  Var mix = t.scale_rows(member_probs[0], t.slice_col(w, 0));
  for (i64 m = 1; m < r; ++m)
    mix = t.add(mix, t.scale_rows(member_probs[static_cast<std::size_t>(m)], t.slice_col(w, m)));
  Var zbar = t.softmax_rows(mix, 1.0);
  Var target = t.softmax_rows(zbar, T);

  std::vector<Var> terms;
  std::vector<double> weights;
  for (i64 l = 1; l < k; ++l) {
    Var z = logits[static_cast<std::size_t>(l - 1)];
    terms.push_back(t.cross_entropy_mean(t.take_rows(t.softmax_rows(z, 1.0), lp), y));
    weights.push_back(1.0 - lambda);
    terms.push_back(t.cross_entropy_mean(t.softmax_rows(z, T), target));
    weights.push_back(lambda * T * T);
  }
  terms.push_back(t.cross_entropy_mean(t.take_rows(zbar, lp), y));
  weights.push_back(cfg.teacher_loss_weight);
  g.loss = t.add_weighted(terms, weights);
  return g;
}

void single_scale_distill(ClassifierStack& stack, const DepthFeatures& df, const Matrix& labels,
                          std::span<const i64> labeled_idx, std::span<const i64> distill_idx,
                          const DistillConfig& cfg, std::uint64_t seed) {
  cfg.validate(stack.k);
  require(stack.is_trained(stack.k), Errc::state, "single_scale_distill: teacher untrained");
  require(!labeled_idx.empty() && !distill_idx.empty(), Errc::invalid_argument,
          "single_scale_distill: empty node set");

  const std::vector<i64> labeled_pos = labeled_positions(labeled_idx, distill_idx);
  const Matrix y = gather_rows(labels, labeled_idx);
  const Matrix xk = gather_rows(combine(df, stack.k), distill_idx);
  const Matrix target = tempered_rows(forward(stack.net(stack.k), xk, false, nullptr), cfg.T_single);

  Rng rng(stage_seed(seed, "single-scale"));
  for (i64 l = 1; l < stack.k; ++l) {
    const Matrix xl = gather_rows(combine(df, l), distill_idx);
    DenseParams& net = stack.net(l);
    auto ptrs = net.param_ptrs();
    AdamState adam;
    adam.init(ptrs);
    for (i64 epoch = 0; epoch < cfg.epochs_single; ++epoch) {
      Tape t;
      MlpVars pv = lift_params(t, net);
      Var loss = single_scale_loss(t, pv, net.dropout, xl, y, labeled_pos, target, cfg.T_single,
                                   cfg.lambda_single, true, &rng);
      t.backward(loss);
      const std::vector<Matrix> grads = collect_grads(t, pv);
      adam_step(ptrs, grads, adam, cfg.lr_single, cfg.weight_decay);
    }
    stack.mark_trained(l);
  }
}

void multi_scale_distill(ClassifierStack& stack, const DepthFeatures& df, const Matrix& labels,
                         std::span<const i64> labeled_idx, std::span<const i64> distill_idx,
                         const DistillConfig& cfg, std::uint64_t seed) {
  cfg.validate(stack.k);
  require(stack.is_trained(stack.k), Errc::state, "multi_scale_distill: teacher untrained");
  require(!labeled_idx.empty() && !distill_idx.empty(), Errc::invalid_argument,
          "multi_scale_distill: empty node set");
  const i64 k = stack.k;
  const i64 r = cfg.resolve_r(k);

  const std::vector<i64> labeled_pos = labeled_positions(labeled_idx, distill_idx);
  const Matrix y = gather_rows(labels, labeled_idx);
  std::vector<Matrix> inputs;
  for (i64 l = 1; l <= k; ++l) inputs.push_back(gather_rows(combine(df, l), distill_idx));

  std::vector<Matrix> s_storage(static_cast<std::size_t>(r), Matrix(stack.c, 1));

  std::vector<Matrix*> ptrs;
  for (i64 l = 1; l < k; ++l)
    for (Matrix* p : stack.net(l).param_ptrs()) ptrs.push_back(p);
  for (Matrix& s : s_storage) ptrs.push_back(&s);
  AdamState adam;
  adam.init(ptrs);

  Rng rng(stage_seed(seed, "multi-scale"));
  for (i64 epoch = 0; epoch < cfg.epochs_multi; ++epoch) {
    Tape t;
    MultiScaleGraph g = multi_scale_graph(t, stack, inputs, y, labeled_pos, cfg, s_storage, true, &rng);
    t.backward(g.loss);
    std::vector<Matrix> grads;
    for (const MlpVars& pv : g.students)
      for (Matrix& gm : collect_grads(t, pv)) grads.push_back(std::move(gm));
    for (Var s : g.s_vars) grads.push_back(t.grad(s));
    adam_step(ptrs, grads, adam, cfg.lr_multi, cfg.weight_decay);
  }

  stack.s_vectors.clear();
  for (const Matrix& s : s_storage) stack.s_vectors.push_back(s.data);
  stack.ensemble_r = r;
  for (i64 l = 1; l < k; ++l) stack.mark_trained(l);
}

EnsembleTeacher ensemble_forward(const ClassifierStack& stack, const DepthFeatures& df, i64 r,
                                 std::span<const std::vector<double>> s_vectors,
                                 std::span<const i64> nodes) {
  require(r >= 1 && r <= stack.k, Errc::invalid_argument, "ensemble_forward: r out of range");
  require(static_cast<i64>(s_vectors.size()) == r, Errc::invalid_argument,
          "ensemble_forward: need one attention vector per member");
  std::vector<i64> all;
  if (nodes.empty()) {
    all.resize(static_cast<std::size_t>(df.stack[0].rows));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<i64>(i);
    nodes = all;
  }
  const i64 rows = static_cast<i64>(nodes.size());

  EnsembleTeacher out;
  out.q = Matrix(rows, r);
  out.w = Matrix(rows, r);
  out.zbar = Matrix(rows, stack.c);
  std::vector<Matrix> probs;
  for (i64 m = 0; m < r; ++m) {
    const i64 depth = stack.k - r + 1 + m;
    require(stack.is_trained(depth), Errc::state, "ensemble_forward: member classifier untrained");
    const auto& s = s_vectors[static_cast<std::size_t>(m)];
    require(static_cast<i64>(s.size()) == stack.c, Errc::invalid_argument,
            "ensemble_forward: attention vector length != classes");
    probs.push_back(predict(stack.net(depth), gather_rows(combine(df, depth), nodes)));
    out.member_depths.push_back(depth);
    for (i64 i = 0; i < rows; ++i) {
      double dot = 0.0;
      for (i64 j = 0; j < stack.c; ++j) dot += probs.back().at(i, j) * s[static_cast<std::size_t>(j)];
      out.q.at(i, m) = 1.0 / (1.0 + std::exp(-dot));
    }
  }
  Matrix mix(rows, stack.c);
  for (i64 i = 0; i < rows; ++i) {
    softmax_t(out.q.row(i), r, 1.0, out.w.row(i));
    for (i64 m = 0; m < r; ++m)
      for (i64 j = 0; j < stack.c; ++j)
        mix.at(i, j) += out.w.at(i, m) * probs[static_cast<std::size_t>(m)].at(i, j);
    softmax_t(mix.row(i), stack.c, 1.0, out.zbar.row(i));
  }
  return out;
}

}  // namespace nai
