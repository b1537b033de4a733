#include "nai/classifiers.hpp"

#include <algorithm>

namespace nai {

i64 ClassifierStack::input_width(i64 depth) const { return combined_width(mode, depth, f); }

DenseParams& ClassifierStack::net(i64 depth) {
  require(depth >= 1 && depth <= k, Errc::invalid_argument, "stack: depth out of range");
  return nets[static_cast<std::size_t>(depth - 1)];
}

const DenseParams& ClassifierStack::net(i64 depth) const {
  require(depth >= 1 && depth <= k, Errc::invalid_argument, "stack: depth out of range");
  return nets[static_cast<std::size_t>(depth - 1)];
}

bool ClassifierStack::is_trained(i64 depth) const {
  require(depth >= 1 && depth <= k, Errc::invalid_argument, "stack: depth out of range");
  return trained[static_cast<std::size_t>(depth - 1)] != 0;
}

void ClassifierStack::mark_trained(i64 depth) {
  require(depth >= 1 && depth <= k, Errc::invalid_argument, "stack: depth out of range");
  trained[static_cast<std::size_t>(depth - 1)] = 1;
}

ClassifierStack make_stack(CombineMode mode, i64 k, i64 f, i64 c, i64 hidden, double dropout,
                           Rng& rng) {
  require(k >= 1, Errc::invalid_argument, "make_stack: k must be >= 1");
  require(f >= 1 && c >= 1, Errc::invalid_argument, "make_stack: empty feature or class dim");
  ClassifierStack s;
  s.mode = mode;
  s.k = k;
  s.f = f;
  s.c = c;
  s.trained.assign(static_cast<std::size_t>(k), 0);
  std::vector<i64> hid;
  if (hidden > 0) hid.push_back(hidden);
  for (i64 depth = 1; depth <= k; ++depth)
    s.nets.push_back(make_mlp(s.input_width(depth), hid, c, dropout, rng));
  return s;
}

namespace {

// One optimization pass shared by the teacher trainer: minimise mean CE of
// softmax(logits) against one-hot rows, mini-batched when asked to.
void fit_plain_ce(DenseParams& net, const Matrix& x, const Matrix& y, const TrainHyper& hyper,
                  Rng& rng) {
  auto ptrs = net.param_ptrs();
  AdamState adam;
  adam.init(ptrs);
  std::vector<i64> order(static_cast<std::size_t>(x.rows));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<i64>(i);
  const i64 bs = hyper.batch_size > 0 ? std::min<i64>(hyper.batch_size, x.rows) : x.rows;
  rng.shuffle(order);
  for (i64 start = 0; start < x.rows; start += bs) {
    const i64 stop = std::min<i64>(start + bs, x.rows);
    std::vector<i64> batch(order.begin() + start, order.begin() + stop);
    Tape t;
    MlpVars pv = lift_params(t, net);
    Var xb = t.input(gather_rows(x, batch));
    Var yb = t.input(gather_rows(y, batch));
    Var logits = forward_on_tape(t, pv, net.dropout, xb, true, &rng);
    Var loss = t.cross_entropy_mean(t.softmax_rows(logits, 1.0), yb);
    t.backward(loss);
    std::vector<Matrix> grads = collect_grads(t, pv);
    adam_step(ptrs, grads, adam, hyper.lr, hyper.weight_decay);
  }
}

}  // namespace

double train_teacher(ClassifierStack& stack, const DepthFeatures& df, const Matrix& labels,
                     std::span<const i64> train_idx, std::span<const i64> val_idx,
                     const TrainHyper& hyper, std::uint64_t seed) {
  require(!train_idx.empty(), Errc::invalid_argument, "train_teacher: empty labeled set");
  require(!val_idx.empty(), Errc::invalid_argument, "train_teacher: empty validation set");
  require(labels.cols == stack.c, Errc::invalid_argument, "train_teacher: label width != classes");
  require(df.k >= stack.k, Errc::invalid_argument, "train_teacher: feature stack shallower than k");

  const Matrix xk = combine(df, stack.k);
  const Matrix xtr = gather_rows(xk, train_idx);
  const Matrix ytr = gather_rows(labels, train_idx);
  const Matrix xva = gather_rows(xk, val_idx);

  DenseParams& net = stack.net(stack.k);
  Rng rng(stage_seed(seed, "teacher"));
  std::vector<Matrix> best;
  for (const Matrix* p : std::as_const(net).param_ptrs()) best.push_back(*p);
  double best_acc = -1.0;
  i64 since_best = 0;
  for (i64 epoch = 0; epoch < hyper.epochs; ++epoch) {
    fit_plain_ce(net, xtr, ytr, hyper, rng);
    const double acc = accuracy(predict(net, xva), labels, val_idx);
    if (acc > best_acc) {
      best_acc = acc;
      best.clear();
      for (const Matrix* p : std::as_const(net).param_ptrs()) best.push_back(*p);
      since_best = 0;
    } else if (++since_best >= hyper.patience) {
      break;
    }
  }
  auto ptrs = net.param_ptrs();
  for (std::size_t i = 0; i < ptrs.size(); ++i) *ptrs[i] = best[i];
  stack.mark_trained(stack.k);
  return best_acc;
}

Matrix predict(const DenseParams& net, const Matrix& features) {
  Matrix logits = forward(net, features, false, nullptr);
  Matrix out(logits.rows, logits.cols);
  for (i64 r = 0; r < logits.rows; ++r) softmax_t(logits.row(r), logits.cols, 1.0, out.row(r));
  return out;
}

std::vector<i64> argmax_rows(const Matrix& probs) {
  std::vector<i64> out(static_cast<std::size_t>(probs.rows));
  for (i64 r = 0; r < probs.rows; ++r) out[static_cast<std::size_t>(r)] = argmax_index(probs.row(r), probs.cols);
  return out;
}

double accuracy(const Matrix& probs, const Matrix& labels, std::span<const i64> idx) {
  require(!idx.empty(), Errc::invalid_argument, "accuracy: empty index set");
  require(labels.cols == probs.cols, Errc::invalid_argument, "accuracy: width mismatch");
  i64 hits = 0;
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const i64 node = idx[j];
    require(node >= 0 && node < labels.rows, Errc::invalid_argument, "accuracy: index out of range");
    // probs rows either cover all nodes or exactly the idx set, in that order.
    const i64 prow = probs.rows == labels.rows ? node : static_cast<i64>(j);
    require(prow < probs.rows, Errc::invalid_argument, "accuracy: prediction rows too short");
    if (argmax_index(probs.row(prow), probs.cols) == argmax_index(labels.row(node), labels.cols)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

}  // namespace nai
