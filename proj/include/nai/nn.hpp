#pragma once
// Dense neural-network substrate: matrix-level reverse-mode tape, softmax and
// cross-entropy primitives, Gumbel-softmax sampling, MLP parameters, Adam,
// and a central finite-difference gradient checker.
//
// The tape works at matrix granularity. Ops append nodes whose backward
// closures scatter gradients to their inputs; nodes are topologically ordered
// by construction, so backward() is a single reverse sweep.

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "nai/common.hpp"

namespace nai {

inline constexpr double kLogClampEps = 1e-12;

// --------------------------------------------------------------------------
// Standalone primitives (no tape)

// softmax(z / T); numerically stabilized; out may alias z.
void softmax_t(const double* z, i64 n, double temperature, double* out);

// -sum q*log(max(p, eps)). Terms with q == 0 contribute zero.
double cross_entropy(std::span<const double> p, std::span<const double> q);

// Lowest index among the maxima.
i64 argmax_index(const double* v, i64 n);

void onehot(i64 index, i64 n, double* out);

// Relaxed or straight-through Gumbel-softmax sample of a logit vector.
// hard=true returns the one-hot argmax of the relaxed sample.
void gumbel_softmax(std::span<const double> logits, double tau, Rng& rng, bool hard, double* out);

// Noise-free inference rule: one-hot argmax of the logits.
void gumbel_argmax(std::span<const double> logits, double* out);

// --------------------------------------------------------------------------
// Tape

class Tape;

struct Var {
  Tape* tape = nullptr;
  i64 id = -1;
};

class Tape {
 public:
  Var input(Matrix value);  // constant, no gradient
  Var param(Matrix value);  // leaf with gradient
  Var zeros(i64 rows, i64 cols) { return input(Matrix(rows, cols)); }

  const Matrix& value(Var v) const;
  // Valid after backward(); zero matrix if the node was never reached.
  const Matrix& grad(Var v) const;
  void backward(Var loss);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double c);
  Var add_const(Var a, double c);
  Var add_rowvec(Var a, Var bias);  // bias 1 x c broadcast over rows
  Var relu(Var a);
  Var sigmoid(Var a);
  Var dropout(Var a, double rate, Rng& rng);  // inverted; rate 0 passes through
  Var softmax_rows(Var a, double temperature);
  Var concat_cols(std::span<const Var> parts);
  Var take_rows(Var a, std::vector<i64> rows);
  Var slice_col(Var a, i64 col);            // n x 1
  Var scale_rows(Var a, Var w);             // w n x 1; out_ij = w_i * a_ij
  Var cross_entropy_mean(Var p, Var q);     // scalar; mean over rows; grads to both
  Var straight_through_hard(Var soft);      // forward row argmax one-hot, identity gradient
  Var add_weighted(std::span<const Var> terms, std::span<const double> weights);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void()> back;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;

  Var push(Matrix value, bool needs_grad, std::function<void()> back);
  Matrix& grad_slot(i64 id);
  void check(Var v) const;
  friend struct TapeAccess;
};

// Gumbel-softmax on the tape: softmax((logits + G)/tau) with fixed noise G
// drawn from rng; hard selects the straight-through estimator.
Var gumbel_softmax_on_tape(Tape& t, Var logits, double tau, Rng& rng, bool hard);

// --------------------------------------------------------------------------
// MLP

struct DenseParams {
  std::vector<Matrix> weights;  // layer i: in_i x out_i
  std::vector<Matrix> biases;   // 1 x out_i
  double dropout = 0.0;

  i64 layer_count() const { return static_cast<i64>(weights.size()); }
  i64 in_dim() const { return weights.front().rows; }
  i64 out_dim() const { return weights.back().cols; }
  std::vector<Matrix*> param_ptrs();
  std::vector<const Matrix*> param_ptrs() const;
};

// Hidden layers use ReLU; dropout is applied to every layer input in train
// mode (so a single linear layer sees input dropout). Glorot-uniform init.
DenseParams make_mlp(i64 in_dim, std::span<const i64> hidden, i64 out_dim, double dropout,
                     Rng& rng);

Matrix forward(const DenseParams& p, const Matrix& x, bool train_mode, Rng* rng);

struct MlpVars {
  std::vector<Var> weights, biases;
};

MlpVars lift_params(Tape& t, const DenseParams& p, bool frozen = false);
Var forward_on_tape(Tape& t, const MlpVars& pv, double dropout, Var x, bool train_mode, Rng* rng);

// Pulls gradients for lifted params in param_ptrs() order.
std::vector<Matrix> collect_grads(const Tape& t, const MlpVars& pv);

// --------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<Matrix> m, v;
  i64 t = 0;

  void init(std::span<Matrix* const> params);
};

// Classic Adam (b1=0.9, b2=0.999, eps=1e-8) with L2 term wd folded into the
// gradient. Aborts with a diagnostic on non-finite gradients.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
               double lr, double wd);

// --------------------------------------------------------------------------
// Finite differences

// run(grads): evaluate the loss at the current parameter values; when grads
// is non-null, also fill per-parameter gradients (param_ptrs order). Must be
// deterministic for fixed parameter values. Returns max relative error
// |fd - ad| / max(|fd|, |ad|, 1e-4) over every parameter entry, central
// differences with step h.
double fd_check(std::span<Matrix* const> params,
                const std::function<double(std::vector<Matrix>*)>& run, double h = 1e-5);

}  // namespace nai
