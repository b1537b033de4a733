#pragma once
// Two-stage distillation for the classifier stack. Stage one trains every
// shallow net against the frozen deepest net's tempered outputs; stage two
// re-trains them jointly against an attention-weighted ensemble of the
// deepest r nets, learning the attention vectors at the same time.

#include <span>
#include <vector>

#include "nai/classifiers.hpp"
#include "nai/common.hpp"
#include "nai/nn.hpp"
#include "nai/propagation.hpp"

namespace nai {

struct DistillConfig {
  double T_single = 1.2;
  double lambda_single = 0.6;
  double T_multi = 1.9;
  double lambda_multi = 0.8;
  i64 r = 0;  // ensemble size; 0 picks min(3, k-1)
  i64 epochs_single = 100;
  i64 epochs_multi = 200;
  double lr_single = 0.01;
  double lr_multi = 0.01;
  double weight_decay = 0.0;
  // Weight on the ensemble's own hard-label term, applied once in the joint
  // objective (not once per student). 0 is the diagnostic soft-targets-only
  // mode.
  double teacher_loss_weight = 1.0;

  i64 resolve_r(i64 k) const;
  void validate(i64 k) const;  // temperatures > 0, lambdas in [0,1], 1 <= r <= k
};

// Ensemble teacher evaluated on a fixed row set: member depths k-r+1..k,
// per-node attention scores q (rows x r), softmaxed weights w (rows x r,
// each row a simplex), and the blended prediction zbar (rows x c, row
// probabilities).
struct EnsembleTeacher {
  std::vector<i64> member_depths;
  Matrix q;
  Matrix w;
  Matrix zbar;
};

// Mixing loss for one student: (1-lambda) * CE(softmax(z), y) over the
// labeled positions + lambda * T^2 * CE(softmax(z/T), target) over all rows.
// x and target are indexed alike; labeled_pos indexes rows of x.
Var single_scale_loss(Tape& t, const MlpVars& pv, double dropout, const Matrix& x,
                      const Matrix& y_labeled, std::span<const i64> labeled_pos,
                      const Matrix& teacher_target, double T, double lambda, bool train_mode,
                      Rng* rng);

// The joint stage-two objective over all students plus the attention vectors.
// inputs[l-1] holds the depth-l classifier input rows (shared row indexing
// across depths); s_storage holds the r attention column vectors (c x 1) and
// is lifted as trainable parameters. The deepest net stays frozen.
struct MultiScaleGraph {
  Var loss;
  std::vector<MlpVars> students;  // depths 1..k-1, same order as stack nets
  std::vector<Var> s_vars;        // one per member depth k-r+1..k
};
MultiScaleGraph multi_scale_graph(Tape& t, const ClassifierStack& stack,
                                  std::span<const Matrix> inputs, const Matrix& y_labeled,
                                  std::span<const i64> labeled_pos, const DistillConfig& cfg,
                                  std::vector<Matrix>& s_storage, bool train_mode, Rng* rng);

// Stage one. labeled_idx rows of labels supervise the hard term; distill_idx
// (a superset of labeled_idx) carries the tempered teacher term. Trains each
// net below depth k independently; the depth-k net must already be trained
// and does not move.
void single_scale_distill(ClassifierStack& stack, const DepthFeatures& df, const Matrix& labels,
                          std::span<const i64> labeled_idx, std::span<const i64> distill_idx,
                          const DistillConfig& cfg, std::uint64_t seed);

// Stage two. Same row-set conventions. Fills stack.s_vectors and
// stack.ensemble_r; every net below depth k updates jointly, the depth-k net
// is frozen and bit-identical afterwards.
void multi_scale_distill(ClassifierStack& stack, const DepthFeatures& df, const Matrix& labels,
                         std::span<const i64> labeled_idx, std::span<const i64> distill_idx,
                         const DistillConfig& cfg, std::uint64_t seed);

// Evaluate the ensemble teacher (no dropout) on the given rows of df.
EnsembleTeacher ensemble_forward(const ClassifierStack& stack, const DepthFeatures& df, i64 r,
                                 std::span<const std::vector<double>> s_vectors,
                                 std::span<const i64> nodes);

}  // namespace nai
