#pragma once
// Per-depth classifier stack: one net per exit depth, all sharing the
// teacher's architecture. The deepest net is the teacher and trains first;
// shallower ones are filled in by the distillation stages.

#include <span>
#include <vector>

#include "nai/common.hpp"
#include "nai/nn.hpp"
#include "nai/propagation.hpp"

namespace nai {

struct TrainHyper {
  double lr = 0.01;
  double weight_decay = 0.0;
  i64 epochs = 200;
  i64 patience = 50;   // epochs without val improvement before stopping
  i64 batch_size = 0;  // 0 = full batch
};

// nets[l-1] classifies depth l and consumes combine(df, l), so its input
// width is (l+1)*f under the concatenating combinator and f otherwise.
struct ClassifierStack {
  CombineMode mode = CombineMode::SGC;
  i64 k = 0;
  i64 f = 0;  // base feature width
  i64 c = 0;  // classes
  std::vector<DenseParams> nets;
  std::vector<char> trained;
  // Ensemble attention vectors (length c each), one per member depth
  // k-r+1..k. Empty until the multi-scale stage fills them.
  std::vector<std::vector<double>> s_vectors;
  i64 ensemble_r = 0;

  i64 input_width(i64 depth) const;
  DenseParams& net(i64 depth);
  const DenseParams& net(i64 depth) const;
  bool is_trained(i64 depth) const;
  void mark_trained(i64 depth);
};

// hidden = 0 builds single linear layers; otherwise one ReLU hidden layer of
// that width. dropout applies to every layer input in training mode.
ClassifierStack make_stack(CombineMode mode, i64 k, i64 f, i64 c, i64 hidden, double dropout,
                           Rng& rng);

// Fit the depth-k net with cross-entropy over train_idx, early stopping on
// val_idx accuracy; the best-val parameters are restored before returning.
// Returns that best validation accuracy. Deterministic per seed.
double train_teacher(ClassifierStack& stack, const DepthFeatures& df, const Matrix& labels,
                     std::span<const i64> train_idx, std::span<const i64> val_idx,
                     const TrainHyper& hyper, std::uint64_t seed);

// Row-wise class probabilities at temperature 1, no dropout.
Matrix predict(const DenseParams& net, const Matrix& features);

std::vector<i64> argmax_rows(const Matrix& probs);

// Fraction of rows in idx whose probability argmax matches the one-hot label
// row. Ties resolve to the lowest index on both sides.
double accuracy(const Matrix& probs, const Matrix& labels, std::span<const i64> idx);

}  // namespace nai
