#include "nai/nn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace nai {

void softmax_t(const double* z, i64 n, double temperature, double* out) {
  require(temperature > 0.0, Errc::invalid_argument, "softmax: temperature must be positive");
  double mx = -std::numeric_limits<double>::infinity();
  for (i64 i = 0; i < n; ++i) mx = std::max(mx, z[i] / temperature);
  double sum = 0.0;
  for (i64 i = 0; i < n; ++i) {
    out[i] = std::exp(z[i] / temperature - mx);
    sum += out[i];
  }
  const double inv = 1.0 / sum;
  for (i64 i = 0; i < n; ++i) out[i] *= inv;
}

double cross_entropy(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), Errc::invalid_argument, "cross_entropy: length mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (q[i] == 0.0) continue;
    loss -= q[i] * std::log(std::max(p[i], kLogClampEps));
  }
  return loss;
}

i64 argmax_index(const double* v, i64 n) {
  i64 best = 0;
  for (i64 i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

void onehot(i64 index, i64 n, double* out) {
  std::fill(out, out + n, 0.0);
  out[index] = 1.0;
}

void gumbel_softmax(std::span<const double> logits, double tau, Rng& rng, bool hard, double* out) {
  require(tau > 0.0, Errc::invalid_argument, "gumbel_softmax: tau must be positive");
  const i64 n = static_cast<i64>(logits.size());
  std::vector<double> noisy(n);
  for (i64 i = 0; i < n; ++i) noisy[i] = logits[i] + rng.gumbel();
  softmax_t(noisy.data(), n, tau, out);
  if (hard) onehot(argmax_index(out, n), n, out);
}

void gumbel_argmax(std::span<const double> logits, double* out) {
  const i64 n = static_cast<i64>(logits.size());
  onehot(argmax_index(logits.data(), n), n, out);
}

// --------------------------------------------------------------------------
// Tape

namespace {

// A (r x t) times B (t x c) accumulated into out.
void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  for (i64 i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* orow = out.row(i);
    for (i64 t = 0; t < a.cols; ++t) {
      const double av = ar[t];
      if (av == 0.0) continue;
      const double* br = b.row(t);
      for (i64 j = 0; j < b.cols; ++j) orow[j] += av * br[j];
    }
  }
}

// A (r x t) times B^T where B is (c x t), accumulated into out (r x c).
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  for (i64 i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* orow = out.row(i);
    for (i64 j = 0; j < b.rows; ++j) {
      const double* br = b.row(j);
      double s = 0.0;
      for (i64 t = 0; t < a.cols; ++t) s += ar[t] * br[t];
      orow[j] += s;
    }
  }
}

// A^T where A is (t x r), times B (t x c), accumulated into out (r x c).
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  for (i64 t = 0; t < a.rows; ++t) {
    const double* ar = a.row(t);
    const double* br = b.row(t);
    for (i64 i = 0; i < a.cols; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* orow = out.row(i);
      for (i64 j = 0; j < b.cols; ++j) orow[j] += av * br[j];
    }
  }
}

}  // namespace

Var Tape::push(Matrix value, bool needs_grad, std::function<void()> back) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<i64>(nodes_.size()) - 1};
}

void Tape::check(Var v) const {
  require(v.tape == this && v.id >= 0 && v.id < static_cast<i64>(nodes_.size()),
          Errc::invalid_argument, "tape: foreign or empty handle");
}

Var Tape::input(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::param(Matrix value) { return push(std::move(value), true, nullptr); }

const Matrix& Tape::value(Var v) const {
  check(v);
  return nodes_[v.id].value;
}

const Matrix& Tape::grad(Var v) const {
  check(v);
  const Node& n = nodes_[v.id];
  require(n.needs_grad, Errc::state, "tape: gradient requested for a constant");
  if (n.grad.rows != n.value.rows || n.grad.cols != n.value.cols) {
    // Never reached during backward: its gradient is identically zero.
    const_cast<Node&>(n).grad = zeros_like(n.value);
  }
  return n.grad;
}

Matrix& Tape::grad_slot(i64 id) {
  Node& n = nodes_[id];
  if (n.grad.rows != n.value.rows || n.grad.cols != n.value.cols) n.grad = zeros_like(n.value);
  return n.grad;
}

void Tape::backward(Var loss) {
  check(loss);
  const Matrix& lv = nodes_[loss.id].value;
  require(lv.rows == 1 && lv.cols == 1, Errc::invalid_argument, "backward: loss must be 1x1");
  require(nodes_[loss.id].needs_grad, Errc::state, "backward: loss does not depend on parameters");
  grad_slot(loss.id).at(0, 0) = 1.0;
  for (i64 id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.needs_grad && n.back && n.grad.rows != 0) n.back();
  }
}

Var Tape::matmul(Var a, Var b) {
  check(a);
  check(b);
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  require(av.cols == bv.rows, Errc::invalid_argument, "matmul: inner dimensions disagree");
  Matrix out(av.rows, bv.cols);
  matmul_acc(av, bv, out);
  const bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  Var r{this, -1};
  r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 ra = a.id, rb = b.id, rr = r.id;
    nodes_[rr].back = [this, ra, rb, rr] {
      const Matrix& g = nodes_[rr].grad;
      if (nodes_[ra].needs_grad) matmul_nt_acc(g, nodes_[rb].value, grad_slot(ra));
      if (nodes_[rb].needs_grad) matmul_tn_acc(nodes_[ra].value, g, grad_slot(rb));
    };
  }
  return r;
}

Var Tape::add(Var a, Var b) {
  check(a);
  check(b);
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  require(av.same_shape(bv), Errc::invalid_argument, "add: shape mismatch");
  Matrix out = av;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
  const bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 ra = a.id, rb = b.id, rr = r.id;
    nodes_[rr].back = [this, ra, rb, rr] {
      const Matrix& g = nodes_[rr].grad;
      if (nodes_[ra].needs_grad) {
        Matrix& ga = grad_slot(ra);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
      }
      if (nodes_[rb].needs_grad) {
        Matrix& gb = grad_slot(rb);
        for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
      }
    };
  }
  return r;
}

Var Tape::sub(Var a, Var b) {
  check(a);
  check(b);
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  require(av.same_shape(bv), Errc::invalid_argument, "sub: shape mismatch");
  Matrix out = av;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
  const bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 ra = a.id, rb = b.id, rr = r.id;
    nodes_[rr].back = [this, ra, rb, rr] {
      const Matrix& g = nodes_[rr].grad;
      if (nodes_[ra].needs_grad) {
        Matrix& ga = grad_slot(ra);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
      }
      if (nodes_[rb].needs_grad) {
        Matrix& gb = grad_slot(rb);
        for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
      }
    };
  }
  return r;
}

Var Tape::mul(Var a, Var b) {
  check(a);
  check(b);
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  require(av.same_shape(bv), Errc::invalid_argument, "mul: shape mismatch");
  Matrix out = av;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
  const bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 ra = a.id, rb = b.id, rr = r.id;
    nodes_[rr].back = [this, ra, rb, rr] {
      const Matrix& g = nodes_[rr].grad;
      if (nodes_[ra].needs_grad) {
        Matrix& ga = grad_slot(ra);
        const Matrix& bv2 = nodes_[rb].value;
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * bv2.data[i];
      }
      if (nodes_[rb].needs_grad) {
        Matrix& gb = grad_slot(rb);
        const Matrix& av2 = nodes_[ra].value;
        for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * av2.data[i];
      }
    };
  }
  return r;
}

Var Tape::scale(Var a, double c) {
  check(a);
  Matrix out = value(a);
  for (double& v : out.data) v *= c;
  const bool ng = nodes_[a.id].needs_grad;
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 ra = a.id, rr = r.id;
    nodes_[rr].back = [this, ra, rr, c] {
      const Matrix& g = nodes_[rr].grad;
      Matrix& ga = grad_slot(ra);
      for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += c * g.data[i];
    };
  }
  return r;
}

Var Tape::add_const(Var a, double c) {
  check(a);
  Matrix out = value(a);
  for (double& v : out.data) v += c;
  const bool ng = nodes_[a.id].needs_grad;
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 ra = a.id, rr = r.id;
    nodes_[rr].back = [this, ra, rr] {
      const Matrix& g = nodes_[rr].grad;
      Matrix& ga = grad_slot(ra);
      for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    };
  }
  return r;
}

Var Tape::add_rowvec(Var a, Var bias) {
  check(a);
  check(bias);
  const Matrix& av = value(a);
  const Matrix& bv = value(bias);
  require(bv.rows == 1 && bv.cols == av.cols, Errc::invalid_argument,
          "add_rowvec: bias must be 1 x cols");
  Matrix out = av;
  for (i64 i = 0; i < out.rows; ++i) {
    double* orow = out.row(i);
    for (i64 j = 0; j < out.cols; ++j) orow[j] += bv.at(0, j);
  }
  const bool ng = nodes_[a.id].needs_grad || nodes_[bias.id].needs_grad;
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 ra = a.id, rb = bias.id, rr = r.id;
    nodes_[rr].back = [this, ra, rb, rr] {
      const Matrix& g = nodes_[rr].grad;
      if (nodes_[ra].needs_grad) {
        Matrix& ga = grad_slot(ra);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
      }
      if (nodes_[rb].needs_grad) {
        Matrix& gb = grad_slot(rb);
        for (i64 i = 0; i < g.rows; ++i)
          for (i64 j = 0; j < g.cols; ++j) gb.at(0, j) += g.at(i, j);
      }
    };
  }
  return r;
}

Var Tape::relu(Var a) {
  check(a);
  Matrix out = value(a);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  const bool ng = nodes_[a.id].needs_grad;
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 ra = a.id, rr = r.id;
    nodes_[rr].back = [this, ra, rr] {
      const Matrix& g = nodes_[rr].grad;
      const Matrix& av = nodes_[ra].value;
      Matrix& ga = grad_slot(ra);
      for (std::size_t i = 0; i < g.data.size(); ++i)
        if (av.data[i] > 0.0) ga.data[i] += g.data[i];
    };
  }
  return r;
}

Var Tape::sigmoid(Var a) {
  check(a);
  Matrix out = value(a);
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  const bool ng = nodes_[a.id].needs_grad;
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 ra = a.id, rr = r.id;
    nodes_[rr].back = [this, ra, rr] {
      const Matrix& g = nodes_[rr].grad;
      const Matrix& s = nodes_[rr].value;
      Matrix& ga = grad_slot(ra);
      for (std::size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += g.data[i] * s.data[i] * (1.0 - s.data[i]);
    };
  }
  return r;
}

Var Tape::dropout(Var a, double rate, Rng& rng) {
  check(a);
  require(rate >= 0.0 && rate < 1.0, Errc::invalid_argument, "dropout: rate must lie in [0,1)");
  if (rate == 0.0) return a;
  const Matrix& av = value(a);
  Matrix mask(av.rows, av.cols);
  const double keep = 1.0 - rate;
  for (double& v : mask.data) v = rng.uniform() >= rate ? 1.0 / keep : 0.0;
  Matrix out = av;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
  const bool ng = nodes_[a.id].needs_grad;
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 ra = a.id, rr = r.id;
    auto m = std::make_shared<Matrix>(std::move(mask));
    nodes_[rr].back = [this, ra, rr, m] {
      const Matrix& g = nodes_[rr].grad;
      Matrix& ga = grad_slot(ra);
      for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * m->data[i];
    };
  }
  return r;
}

Var Tape::softmax_rows(Var a, double temperature) {
  check(a);
  require(temperature > 0.0, Errc::invalid_argument, "softmax_rows: temperature must be positive");
  const Matrix& av = value(a);
  Matrix out(av.rows, av.cols);
  for (i64 i = 0; i < av.rows; ++i) softmax_t(av.row(i), av.cols, temperature, out.row(i));
  const bool ng = nodes_[a.id].needs_grad;
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 ra = a.id, rr = r.id;
    nodes_[rr].back = [this, ra, rr, temperature] {
      const Matrix& g = nodes_[rr].grad;
      const Matrix& s = nodes_[rr].value;
      Matrix& ga = grad_slot(ra);
      for (i64 i = 0; i < g.rows; ++i) {
        const double* gr = g.row(i);
        const double* sr = s.row(i);
        double dot = 0.0;
        for (i64 j = 0; j < g.cols; ++j) dot += gr[j] * sr[j];
        double* gar = ga.row(i);
        for (i64 j = 0; j < g.cols; ++j) gar[j] += sr[j] * (gr[j] - dot) / temperature;
      }
    };
  }
  return r;
}

Var Tape::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), Errc::invalid_argument, "concat_cols: no inputs");
  i64 rows = value(parts[0]).rows;
  i64 cols = 0;
  bool ng = false;
  for (Var p : parts) {
    check(p);
    require(value(p).rows == rows, Errc::invalid_argument, "concat_cols: row mismatch");
    cols += value(p).cols;
    ng = ng || nodes_[p.id].needs_grad;
  }
  Matrix out(rows, cols);
  i64 off = 0;
  for (Var p : parts) {
    const Matrix& pv = value(p);
    for (i64 i = 0; i < rows; ++i) std::copy(pv.row(i), pv.row(i) + pv.cols, out.row(i) + off);
    off += pv.cols;
  }
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    std::vector<i64> ids;
    for (Var p : parts) ids.push_back(p.id);
    const i64 rr = r.id;
    nodes_[rr].back = [this, ids, rr] {
      const Matrix& g = nodes_[rr].grad;
      i64 off2 = 0;
      for (i64 pid : ids) {
        Node& pn = nodes_[pid];
        const i64 w = pn.value.cols;
        if (pn.needs_grad) {
          Matrix& gp = grad_slot(pid);
          for (i64 i = 0; i < g.rows; ++i) {
            const double* gr = g.row(i) + off2;
            double* gpr = gp.row(i);
            for (i64 j = 0; j < w; ++j) gpr[j] += gr[j];
          }
        }
        off2 += w;
      }
    };
  }
  return r;
}

Var Tape::take_rows(Var a, std::vector<i64> rows) {
  check(a);
  const Matrix& av = value(a);
  Matrix out(static_cast<i64>(rows.size()), av.cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] >= 0 && rows[r] < av.rows, Errc::invalid_argument,
            "take_rows: index out of range");
    std::copy(av.row(rows[r]), av.row(rows[r]) + av.cols, out.row(static_cast<i64>(r)));
  }
  const bool ng = nodes_[a.id].needs_grad;
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 ra = a.id, rr = r.id;
    auto idx = std::make_shared<std::vector<i64>>(std::move(rows));
    nodes_[rr].back = [this, ra, rr, idx] {
      const Matrix& g = nodes_[rr].grad;
      Matrix& ga = grad_slot(ra);
      for (std::size_t r2 = 0; r2 < idx->size(); ++r2) {
        const double* gr = g.row(static_cast<i64>(r2));
        double* gar = ga.row((*idx)[r2]);
        for (i64 j = 0; j < g.cols; ++j) gar[j] += gr[j];
      }
    };
  }
  return r;
}

Var Tape::slice_col(Var a, i64 col) {
  check(a);
  const Matrix& av = value(a);
  require(col >= 0 && col < av.cols, Errc::invalid_argument, "slice_col: column out of range");
  Matrix out(av.rows, 1);
  for (i64 i = 0; i < av.rows; ++i) out.at(i, 0) = av.at(i, col);
  const bool ng = nodes_[a.id].needs_grad;
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 ra = a.id, rr = r.id;
    nodes_[rr].back = [this, ra, rr, col] {
      const Matrix& g = nodes_[rr].grad;
      Matrix& ga = grad_slot(ra);
      for (i64 i = 0; i < g.rows; ++i) ga.at(i, col) += g.at(i, 0);
    };
  }
  return r;
}

Var Tape::scale_rows(Var a, Var w) {
  check(a);
  check(w);
  const Matrix& av = value(a);
  const Matrix& wv = value(w);
  require(wv.rows == av.rows && wv.cols == 1, Errc::invalid_argument,
          "scale_rows: weight must be rows x 1");
  Matrix out = av;
  for (i64 i = 0; i < out.rows; ++i) {
    const double s = wv.at(i, 0);
    double* orow = out.row(i);
    for (i64 j = 0; j < out.cols; ++j) orow[j] *= s;
  }
  const bool ng = nodes_[a.id].needs_grad || nodes_[w.id].needs_grad;
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 ra = a.id, rw = w.id, rr = r.id;
    nodes_[rr].back = [this, ra, rw, rr] {
      const Matrix& g = nodes_[rr].grad;
      const Matrix& av2 = nodes_[ra].value;
      const Matrix& wv2 = nodes_[rw].value;
      if (nodes_[ra].needs_grad) {
        Matrix& ga = grad_slot(ra);
        for (i64 i = 0; i < g.rows; ++i) {
          const double s = wv2.at(i, 0);
          const double* gr = g.row(i);
          double* gar = ga.row(i);
          for (i64 j = 0; j < g.cols; ++j) gar[j] += s * gr[j];
        }
      }
      if (nodes_[rw].needs_grad) {
        Matrix& gw = grad_slot(rw);
        for (i64 i = 0; i < g.rows; ++i) {
          const double* gr = g.row(i);
          const double* ar = av2.row(i);
          double s = 0.0;
          for (i64 j = 0; j < g.cols; ++j) s += gr[j] * ar[j];
          gw.at(i, 0) += s;
        }
      }
    };
  }
  return r;
}

Var Tape::cross_entropy_mean(Var p, Var q) {
  check(p);
  check(q);
  const Matrix& pv = value(p);
  const Matrix& qv = value(q);
  require(pv.same_shape(qv), Errc::invalid_argument, "cross_entropy_mean: shape mismatch");
  require(pv.rows > 0, Errc::invalid_argument, "cross_entropy_mean: empty batch");
  double loss = 0.0;
  for (i64 i = 0; i < pv.rows; ++i)
    loss += cross_entropy(std::span<const double>(pv.row(i), pv.cols),
                          std::span<const double>(qv.row(i), qv.cols));
  Matrix out(1, 1);
  out.at(0, 0) = loss / static_cast<double>(pv.rows);
  const bool ng = nodes_[p.id].needs_grad || nodes_[q.id].needs_grad;
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 rp = p.id, rq = q.id, rr = r.id;
    nodes_[rr].back = [this, rp, rq, rr] {
      const double g = nodes_[rr].grad.at(0, 0);
      const Matrix& pv2 = nodes_[rp].value;
      const Matrix& qv2 = nodes_[rq].value;
      const double invn = 1.0 / static_cast<double>(pv2.rows);
      if (nodes_[rp].needs_grad) {
        Matrix& gp = grad_slot(rp);
        for (std::size_t i = 0; i < pv2.data.size(); ++i) {
          if (qv2.data[i] == 0.0 || pv2.data[i] < kLogClampEps) continue;
          gp.data[i] -= g * invn * qv2.data[i] / pv2.data[i];
        }
      }
      if (nodes_[rq].needs_grad) {
        Matrix& gq = grad_slot(rq);
        for (std::size_t i = 0; i < pv2.data.size(); ++i)
          gq.data[i] -= g * invn * std::log(std::max(pv2.data[i], kLogClampEps));
      }
    };
  }
  return r;
}

Var Tape::straight_through_hard(Var soft) {
  check(soft);
  const Matrix& sv = value(soft);
  Matrix out(sv.rows, sv.cols);
  for (i64 i = 0; i < sv.rows; ++i) onehot(argmax_index(sv.row(i), sv.cols), sv.cols, out.row(i));
  const bool ng = nodes_[soft.id].needs_grad;
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    const i64 rs = soft.id, rr = r.id;
    nodes_[rr].back = [this, rs, rr] {
      const Matrix& g = nodes_[rr].grad;
      Matrix& gs = grad_slot(rs);
      for (std::size_t i = 0; i < g.data.size(); ++i) gs.data[i] += g.data[i];
    };
  }
  return r;
}

Var Tape::add_weighted(std::span<const Var> terms, std::span<const double> weights) {
  require(!terms.empty() && terms.size() == weights.size(), Errc::invalid_argument,
          "add_weighted: need matching terms and weights");
  const Matrix& first = value(terms[0]);
  Matrix out(first.rows, first.cols);
  bool ng = false;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    check(terms[t]);
    const Matrix& tv = value(terms[t]);
    require(tv.same_shape(first), Errc::invalid_argument, "add_weighted: shape mismatch");
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += weights[t] * tv.data[i];
    ng = ng || nodes_[terms[t].id].needs_grad;
  }
  Var r = push(std::move(out), ng, nullptr);
  if (ng) {
    std::vector<i64> ids;
    std::vector<double> ws(weights.begin(), weights.end());
    for (Var t : terms) ids.push_back(t.id);
    const i64 rr = r.id;
    nodes_[rr].back = [this, ids, ws, rr] {
      const Matrix& g = nodes_[rr].grad;
      for (std::size_t t = 0; t < ids.size(); ++t) {
        if (!nodes_[ids[t]].needs_grad) continue;
        Matrix& gt = grad_slot(ids[t]);
        for (std::size_t i = 0; i < g.data.size(); ++i) gt.data[i] += ws[t] * g.data[i];
      }
    };
  }
  return r;
}

Var gumbel_softmax_on_tape(Tape& t, Var logits, double tau, Rng& rng, bool hard) {
  const Matrix& lv = t.value(logits);
  Matrix noise(lv.rows, lv.cols);
  for (double& v : noise.data) v = rng.gumbel();
  Var noisy = t.add(logits, t.input(std::move(noise)));
  Var soft = t.softmax_rows(noisy, tau);
  return hard ? t.straight_through_hard(soft) : soft;
}

// --------------------------------------------------------------------------
// MLP

std::vector<Matrix*> DenseParams::param_ptrs() {
  std::vector<Matrix*> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  return out;
}

std::vector<const Matrix*> DenseParams::param_ptrs() const {
  std::vector<const Matrix*> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  return out;
}

DenseParams make_mlp(i64 in_dim, std::span<const i64> hidden, i64 out_dim, double dropout,
                     Rng& rng) {
  require(in_dim > 0 && out_dim > 0, Errc::invalid_argument, "make_mlp: dims must be positive");
  require(dropout >= 0.0 && dropout < 1.0, Errc::invalid_argument,
          "make_mlp: dropout must lie in [0,1)");
  DenseParams p;
  p.dropout = dropout;
  std::vector<i64> dims;
  dims.push_back(in_dim);
  for (i64 h : hidden) {
    require(h > 0, Errc::invalid_argument, "make_mlp: hidden dim must be positive");
    dims.push_back(h);
  }
  dims.push_back(out_dim);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Matrix w(dims[i], dims[i + 1]);
    const double limit = std::sqrt(6.0 / static_cast<double>(dims[i] + dims[i + 1]));
    for (double& v : w.data) v = rng.uniform(-limit, limit);
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(1, dims[i + 1]);
  }
  return p;
}

Matrix forward(const DenseParams& p, const Matrix& x, bool train_mode, Rng* rng) {
  require(x.cols == p.in_dim(), Errc::invalid_argument, "forward: input width mismatch");
  require(!train_mode || p.dropout == 0.0 || rng != nullptr, Errc::invalid_argument,
          "forward: train mode with dropout needs an RNG");
  Matrix h = x;
  for (i64 layer = 0; layer < p.layer_count(); ++layer) {
    if (train_mode && p.dropout > 0.0) {
      const double keep = 1.0 - p.dropout;
      for (double& v : h.data) v = rng->uniform() >= p.dropout ? v / keep : 0.0;
    }
    Matrix next(h.rows, p.weights[layer].cols);
    matmul_acc(h, p.weights[layer], next);
    for (i64 i = 0; i < next.rows; ++i)
      for (i64 j = 0; j < next.cols; ++j) next.at(i, j) += p.biases[layer].at(0, j);
    if (layer + 1 < p.layer_count())
      for (double& v : next.data) v = v > 0.0 ? v : 0.0;
    h = std::move(next);
  }
  return h;
}

MlpVars lift_params(Tape& t, const DenseParams& p, bool frozen) {
  MlpVars pv;
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    pv.weights.push_back(frozen ? t.input(p.weights[i]) : t.param(p.weights[i]));
    pv.biases.push_back(frozen ? t.input(p.biases[i]) : t.param(p.biases[i]));
  }
  return pv;
}

Var forward_on_tape(Tape& t, const MlpVars& pv, double dropout, Var x, bool train_mode, Rng* rng) {
  Var h = x;
  const i64 layers = static_cast<i64>(pv.weights.size());
  for (i64 layer = 0; layer < layers; ++layer) {
    if (train_mode && dropout > 0.0) {
      require(rng != nullptr, Errc::invalid_argument, "forward_on_tape: dropout needs an RNG");
      h = t.dropout(h, dropout, *rng);
    }
    h = t.add_rowvec(t.matmul(h, pv.weights[layer]), pv.biases[layer]);
    if (layer + 1 < layers) h = t.relu(h);
  }
  return h;
}

std::vector<Matrix> collect_grads(const Tape& t, const MlpVars& pv) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < pv.weights.size(); ++i) {
    out.push_back(t.grad(pv.weights[i]));
    out.push_back(t.grad(pv.biases[i]));
  }
  return out;
}

// --------------------------------------------------------------------------
// Adam

void AdamState::init(std::span<Matrix* const> params) {
  m.clear();
  v.clear();
  for (Matrix* p : params) {
    m.push_back(zeros_like(*p));
    v.push_back(zeros_like(*p));
  }
  t = 0;
}

void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
               double lr, double wd) {
  require(params.size() == grads.size() && params.size() == state.m.size(), Errc::invalid_argument,
          "adam_step: state and gradient lists out of step");
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  state.t += 1;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix& w = *params[pi];
    const Matrix& g = grads[pi];
    require(w.same_shape(g), Errc::invalid_argument, "adam_step: gradient shape mismatch");
    Matrix& mm = state.m[pi];
    Matrix& vv = state.v[pi];
    for (std::size_t i = 0; i < w.data.size(); ++i) {
      const double gi = g.data[i] + wd * w.data[i];
      require(std::isfinite(gi), Errc::numeric, "adam_step: non-finite gradient, training aborted");
      mm.data[i] = b1 * mm.data[i] + (1.0 - b1) * gi;
      vv.data[i] = b2 * vv.data[i] + (1.0 - b2) * gi * gi;
      const double mhat = mm.data[i] / c1;
      const double vhat = vv.data[i] / c2;
      w.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// --------------------------------------------------------------------------
// Finite differences

double fd_check(std::span<Matrix* const> params,
                const std::function<double(std::vector<Matrix>*)>& run, double h) {
  std::vector<Matrix> grads;
  run(&grads);
  require(grads.size() == params.size(), Errc::invalid_argument,
          "fd_check: gradient count mismatch");
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix& w = *params[pi];
    require(w.same_shape(grads[pi]), Errc::invalid_argument, "fd_check: gradient shape mismatch");
    for (std::size_t i = 0; i < w.data.size(); ++i) {
      const double saved = w.data[i];
      w.data[i] = saved + h;
      const double lp = run(nullptr);
      w.data[i] = saved - h;
      const double lm = run(nullptr);
      w.data[i] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double ad = grads[pi].data[i];
      const double rel = std::fabs(fd - ad) / std::max({std::fabs(fd), std::fabs(ad), 1e-4});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace nai
