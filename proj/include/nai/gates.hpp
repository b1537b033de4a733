#pragma once
// Learned exit gates, one per depth below k. A gate reads the node's current
// propagated row next to its carried row and emits a two-way one-hot mask:
// first component selects exit at this depth, second defers. A saturating
// penalty keeps training-mode gates from selecting a node twice.

#include <array>
#include <span>
#include <vector>

#include "nai/classifiers.hpp"
#include "nai/common.hpp"
#include "nai/nn.hpp"
#include "nai/propagation.hpp"

namespace nai {

struct GateStack {
  i64 k = 0;  // classifier depth; gates cover depths 1..k-1
  i64 f = 0;  // feature width; each gate weight is 2f x 2, no bias
  double mu = 1000.0;
  double phi = 1000.0;
  std::vector<Matrix> w;
  bool trained = false;

  i64 gate_count() const { return static_cast<i64>(w.size()); }
  const Matrix& gate(i64 depth) const;  // depth in 1..k-1
  Matrix& gate(i64 depth);
};

GateStack make_gates(i64 k, i64 f, Rng& rng);

// Single-row gate evaluation. e gets the two softmaxed scores before the
// penalty; mask gets the one-hot decision over (e1 - theta, e2): Gumbel
// straight-through when training (rng required), noise-free argmax otherwise
// (ties defer to the first component).
void gate_forward(const Matrix& w, std::span<const double> x_l, std::span<const double> x_hat,
                  double theta, bool training, double tau, Rng* rng, double* e, double* mask);

// mask (1,0) carries the freshly selected row, (0,1) keeps the old carry.
void carry_update(std::span<const double> mask, std::span<const double> x_l,
                  std::span<const double> x_hat, double* out);

// Smallest depth whose mask selects, k when none does.
i64 gate_exit_depth(std::span<const std::array<double, 2>> masks, i64 k);

// Mask relaxation inside the training graph: Hard is the straight-through
// Gumbel path used for real training, Soft drops both the noise and the
// hard rounding so gradients are exactly those of the evaluated function.
enum class GateRelax { Hard, Soft };

// End-to-end gate objective over a fixed row set. xl[l-1] holds the depth-l
// propagated rows for l in 1..k-1, x_inf the stationary rows, probs[l-1] the
// frozen depth-l classifier probabilities for l in 1..k, y one-hot labels.
// The per-node prediction is the mask-routed mixture of the probs rows; the
// loss is its mean cross-entropy.
struct GateGraph {
  Var loss;
  std::vector<Var> w_vars;  // depths 1..k-1
  std::vector<Var> masks;   // rows x 2 each
};
GateGraph gate_graph(Tape& t, const GateStack& gates, std::span<const Matrix> xl,
                     const Matrix& x_inf, std::span<const Matrix> probs, const Matrix& y,
                     GateRelax relax, double tau, Rng* rng);

struct GateHyper {
  double lr = 0.01;
  double weight_decay = 0.0;
  i64 epochs = 100;
  double tau = 1.0;
};

// Joint training of all gates against the frozen classifier stack; labeled_idx
// selects the supervised rows in df/x_inf/labels. Classifier parameters do not
// move. k = 1 is a no-op.
void train_gates(GateStack& gates, const ClassifierStack& stack, const DepthFeatures& df,
                 const Matrix& x_inf, const Matrix& labels, std::span<const i64> labeled_idx,
                 const GateHyper& hyper, std::uint64_t seed);

}  // namespace nai
