#include "nai/gates.hpp"

#include <cmath>

namespace nai {

const Matrix& GateStack::gate(i64 depth) const {
  require(depth >= 1 && depth < k, Errc::invalid_argument, "gates: depth out of range");
  return w[static_cast<std::size_t>(depth - 1)];
}

Matrix& GateStack::gate(i64 depth) {
  require(depth >= 1 && depth < k, Errc::invalid_argument, "gates: depth out of range");
  return w[static_cast<std::size_t>(depth - 1)];
}

GateStack make_gates(i64 k, i64 f, Rng& rng) {
  require(k >= 1, Errc::invalid_argument, "make_gates: k must be >= 1");
  require(f >= 1, Errc::invalid_argument, "make_gates: empty feature dim");
  GateStack g;
  g.k = k;
  g.f = f;
  for (i64 l = 1; l < k; ++l) {
    // Same fan-in/fan-out rule as the dense layers.
    const double bound = std::sqrt(6.0 / static_cast<double>(2 * f + 2));
    Matrix w(2 * f, 2);
    for (double& v : w.data) v = rng.uniform(-bound, bound);
    g.w.push_back(std::move(w));
  }
  return g;
}

void gate_forward(const Matrix& w, std::span<const double> x_l, std::span<const double> x_hat,
                  double theta, bool training, double tau, Rng* rng, double* e, double* mask) {
  const i64 f = static_cast<i64>(x_l.size());
  require(static_cast<i64>(x_hat.size()) == f, Errc::invalid_argument,
          "gate_forward: row width mismatch");
  require(w.rows == 2 * f && w.cols == 2, Errc::invalid_argument,
          "gate_forward: weight must be 2f x 2");
  double z[2] = {0.0, 0.0};
  for (i64 j = 0; j < f; ++j) {
    z[0] += x_l[static_cast<std::size_t>(j)] * w.at(j, 0);
    z[1] += x_l[static_cast<std::size_t>(j)] * w.at(j, 1);
  }
  for (i64 j = 0; j < f; ++j) {
    z[0] += x_hat[static_cast<std::size_t>(j)] * w.at(f + j, 0);
    z[1] += x_hat[static_cast<std::size_t>(j)] * w.at(f + j, 1);
  }
  softmax_t(z, 2, 1.0, e);
  const double masked[2] = {e[0] - theta, e[1]};
  if (training) {
    require(rng != nullptr, Errc::invalid_argument, "gate_forward: training mode needs an RNG");
    gumbel_softmax({masked, 2}, tau, *rng, true, mask);
  } else {
    gumbel_argmax({masked, 2}, mask);
  }
}

void carry_update(std::span<const double> mask, std::span<const double> x_l,
                  std::span<const double> x_hat, double* out) {
  require(mask.size() == 2, Errc::invalid_argument, "carry_update: mask must have two entries");
  const bool sel = mask[0] == 1.0 && mask[1] == 0.0;
  const bool keep = mask[0] == 0.0 && mask[1] == 1.0;
  require(sel || keep, Errc::invalid_argument, "carry_update: mask not one-hot");
  require(x_l.size() == x_hat.size(), Errc::invalid_argument, "carry_update: row width mismatch");
  const std::span<const double>& src = sel ? x_l : x_hat;
  for (std::size_t j = 0; j < src.size(); ++j) out[j] = src[j];
}

i64 gate_exit_depth(std::span<const std::array<double, 2>> masks, i64 k) {
  for (std::size_t l = 0; l < masks.size(); ++l)
    if (masks[l][0] == 1.0) return static_cast<i64>(l) + 1;
  return k;
}

GateGraph gate_graph(Tape& t, const GateStack& gates, std::span<const Matrix> xl,
                     const Matrix& x_inf, std::span<const Matrix> probs, const Matrix& y,
                     GateRelax relax, double tau, Rng* rng) {
  const i64 k = gates.k;
  require(static_cast<i64>(xl.size()) == k - 1, Errc::invalid_argument,
          "gate_graph: need depth rows for 1..k-1");
  require(static_cast<i64>(probs.size()) == k, Errc::invalid_argument,
          "gate_graph: need classifier probabilities for 1..k");
  const i64 rows = x_inf.rows;

  GateGraph g;
  Var xhat = t.input(x_inf);
  Matrix ones(rows, 1);
  for (double& v : ones.data) v = 1.0;
  Var survive = t.input(ones);          // probability mass not yet routed
  Var theta = t.input(Matrix(rows, 1));  // accumulated penalty
  Var zeros_col = t.input(Matrix(rows, 1));
  Var routed = t.input(Matrix(rows, probs[0].cols));

  for (i64 l = 1; l < k; ++l) {
    g.w_vars.push_back(t.param(gates.gate(l)));
    const Matrix& xl_m = xl[static_cast<std::size_t>(l - 1)];
    require(xl_m.rows == rows && xl_m.cols == gates.f, Errc::invalid_argument,
            "gate_graph: depth rows shape mismatch");
    Var xl_v = t.input(xl_m);
    Var gin = t.concat_cols(std::array<Var, 2>{xl_v, xhat});
    Var e = t.softmax_rows(t.matmul(gin, g.w_vars.back()), 1.0);
    Var masked = t.sub(e, t.concat_cols(std::array<Var, 2>{theta, zeros_col}));
    Var mask;
    if (relax == GateRelax::Hard) {
      require(rng != nullptr, Errc::invalid_argument, "gate_graph: hard relaxation needs an RNG");
      mask = gumbel_softmax_on_tape(t, masked, tau, *rng, true);
    } else {
      mask = t.softmax_rows(masked, tau);
    }
    g.masks.push_back(mask);
    Var m1 = t.slice_col(mask, 0);
    Var m2 = t.slice_col(mask, 1);
    routed = t.add(routed, t.scale_rows(t.input(probs[static_cast<std::size_t>(l - 1)]),
                                        t.mul(survive, m1)));
    survive = t.mul(survive, m2);
    xhat = t.add(t.scale_rows(xl_v, m1), t.scale_rows(xhat, m2));
    // Saturating re-selection penalty: mu * sigmoid(phi * (m1 - 0.5)).
    theta = t.add(theta, t.scale(t.sigmoid(t.add_const(t.scale(m1, gates.phi), -0.5 * gates.phi)),
                                 gates.mu));
  }
  routed = t.add(routed, t.scale_rows(t.input(probs[static_cast<std::size_t>(k - 1)]), survive));
  g.loss = t.cross_entropy_mean(routed, t.input(y));
  return g;
}

void train_gates(GateStack& gates, const ClassifierStack& stack, const DepthFeatures& df,
                 const Matrix& x_inf, const Matrix& labels, std::span<const i64> labeled_idx,
                 const GateHyper& hyper, std::uint64_t seed) {
  require(gates.k == stack.k && gates.f == stack.f, Errc::invalid_argument,
          "train_gates: gate and classifier shapes disagree");
  for (i64 l = 1; l <= stack.k; ++l)
    require(stack.is_trained(l), Errc::state, "train_gates: classifier stack not fully trained");
  if (gates.k == 1) {
    gates.trained = true;
    return;
  }
  require(!labeled_idx.empty(), Errc::invalid_argument, "train_gates: empty labeled set");

  std::vector<Matrix> xl;
  for (i64 l = 1; l < gates.k; ++l)
    xl.push_back(gather_rows(df.stack[static_cast<std::size_t>(l)], labeled_idx));
  const Matrix xinf_rows = gather_rows(x_inf, labeled_idx);
  std::vector<Matrix> probs;
  for (i64 l = 1; l <= stack.k; ++l)
    probs.push_back(predict(stack.net(l), gather_rows(combine(df, l), labeled_idx)));
  const Matrix y = gather_rows(labels, labeled_idx);

  std::vector<Matrix*> ptrs;
  for (Matrix& w : gates.w) ptrs.push_back(&w);
  AdamState adam;
  adam.init(ptrs);
  Rng rng(stage_seed(seed, "gates"));
  for (i64 epoch = 0; epoch < hyper.epochs; ++epoch) {
    Tape t;
    GateGraph g = gate_graph(t, gates, xl, xinf_rows, probs, y, GateRelax::Hard, hyper.tau, &rng);
    t.backward(g.loss);
    std::vector<Matrix> grads;
    for (Var w : g.w_vars) grads.push_back(t.grad(w));
    adam_step(ptrs, grads, adam, hyper.lr, hyper.weight_decay);
  }
  gates.trained = true;
}

}  // namespace nai
