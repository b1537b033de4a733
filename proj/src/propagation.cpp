#include "nai/propagation.hpp"

#include <algorithm>
#include <cmath>

namespace nai {

const char* combine_mode_name(CombineMode mode) {
  switch (mode) {
    case CombineMode::SGC: return "sgc";
    case CombineMode::SIGN: return "sign";
    case CombineMode::S2GC: return "s2gc";
  }
  return "?";
}

i64 combined_width(CombineMode mode, i64 l, i64 f) {
  return mode == CombineMode::SIGN ? (l + 1) * f : f;
}

void spmm_row_into(const NormalizedAdjacency& adj, NodeId i, const Matrix& x,
                   const i64* local_of, double* out) {
  const i64 f = x.cols;
  std::fill(out, out + f, 0.0);
  for (i64 e = adj.row_offsets[i]; e < adj.row_offsets[i + 1]; ++e) {
    const double v = adj.values[e];
    const NodeId col = adj.col_indices[e];
    const double* xr = x.row(local_of ? local_of[col] : col);
    for (i64 j = 0; j < f; ++j) out[j] += v * xr[j];
  }
}

Matrix spmm_step(const NormalizedAdjacency& adj, const Matrix& x) {
  require(adj.n == x.rows, Errc::invalid_argument, "spmm_step: row count does not match graph");
  Matrix out(x.rows, x.cols);
  for (NodeId i = 0; i < adj.n; ++i) spmm_row_into(adj, i, x, nullptr, out.row(i));
  return out;
}

void spmm_step_rows(const NormalizedAdjacency& adj, const Matrix& x,
                    std::span<const NodeId> rows, Matrix& out) {
  require(adj.n == x.rows, Errc::invalid_argument, "spmm_step_rows: row count does not match graph");
  require(out.same_shape(x), Errc::invalid_argument, "spmm_step_rows: output shape mismatch");
  for (NodeId i : rows) {
    require(i >= 0 && i < adj.n, Errc::invalid_argument, "spmm_step_rows: row id outside graph");
    spmm_row_into(adj, i, x, nullptr, out.row(i));
  }
}

DepthFeatures precompute_depths(const NormalizedAdjacency& adj, const Matrix& x, i64 k,
                                CombineMode mode) {
  require(k >= 1, Errc::invalid_argument, "precompute_depths: k must be at least 1");
  DepthFeatures df;
  df.mode = mode;
  df.k = k;
  df.stack.reserve(static_cast<std::size_t>(k) + 1);
  df.stack.push_back(x);
  for (i64 l = 1; l <= k; ++l) df.stack.push_back(spmm_step(adj, df.stack.back()));
  return df;
}

void combine_rows(CombineMode mode, bool s2gc_divisor_plus_one, std::span<const Matrix> stack,
                  i64 l, std::span<const i64> rows, Matrix& out) {
  require(l >= 0 && l < static_cast<i64>(stack.size()), Errc::invalid_argument,
          "combine: depth out of range");
  const i64 f = stack[0].cols;
  const i64 nr = static_cast<i64>(rows.size());
  out = Matrix(nr, combined_width(mode, l, f));

  switch (mode) {
    case CombineMode::SGC: {
      for (i64 r = 0; r < nr; ++r) {
        const double* src = stack[l].row(rows[r]);
        std::copy(src, src + f, out.row(r));
      }
      break;
    }
    case CombineMode::SIGN: {
      for (i64 r = 0; r < nr; ++r) {
        double* dst = out.row(r);
        for (i64 j = 0; j <= l; ++j) {
          const double* src = stack[j].row(rows[r]);
          std::copy(src, src + f, dst + j * f);
        }
      }
      break;
    }
    case CombineMode::S2GC: {
      if (l == 0) {
        for (i64 r = 0; r < nr; ++r) {
          const double* src = stack[0].row(rows[r]);
          std::copy(src, src + f, out.row(r));
        }
        break;
      }
      const double inv = 1.0 / static_cast<double>(s2gc_divisor_plus_one ? l + 1 : l);
      for (i64 r = 0; r < nr; ++r) {
        double* dst = out.row(r);
        for (i64 j = 0; j <= l; ++j) {
          const double* src = stack[j].row(rows[r]);
          for (i64 t = 0; t < f; ++t) dst[t] += src[t];
        }
        for (i64 t = 0; t < f; ++t) dst[t] *= inv;
      }
      break;
    }
  }
}

Matrix combine(const DepthFeatures& df, i64 l) {
  std::vector<i64> rows(df.stack[0].rows);
  for (i64 i = 0; i < df.stack[0].rows; ++i) rows[i] = i;
  Matrix out;
  combine_rows(df.mode, df.s2gc_divisor_plus_one, df.stack, l, rows, out);
  return out;
}

Matrix StationaryState::expand(std::span<const NodeId> nodes) const {
  Matrix out(static_cast<i64>(nodes.size()), f());
  for (i64 r = 0; r < out.rows; ++r) expand_row(nodes[r], out.row(r));
  return out;
}

Matrix StationaryState::expand_all() const {
  Matrix out(static_cast<i64>(coeff.size()), f());
  for (i64 i = 0; i < out.rows; ++i) expand_row(i, out.row(i));
  return out;
}

StationaryState stationary(const Graph& g, const Matrix& x, double gamma) {
  require(g.n == x.rows, Errc::invalid_argument, "stationary: row count does not match graph");
  StationaryState st;
  st.gamma = gamma;
  st.denom = static_cast<double>(2 * g.m + g.n);
  st.coeff.resize(g.n);
  st.aggregate.assign(x.cols, 0.0);
  for (i64 i = 0; i < g.n; ++i) {
    const double dt = static_cast<double>(g.degrees[i] + 1);
    st.coeff[i] = std::pow(dt, gamma) / st.denom;
    const double w = std::pow(dt, 1.0 - gamma);
    const double* xr = x.row(i);
    for (i64 j = 0; j < x.cols; ++j) st.aggregate[j] += w * xr[j];
  }
  return st;
}

Matrix stationary_naive(const Graph& g, const Matrix& x, double gamma) {
  require(g.n == x.rows, Errc::invalid_argument, "stationary_naive: row count does not match graph");
  const double denom = static_cast<double>(2 * g.m + g.n);
  Matrix out(g.n, x.cols);
  for (i64 i = 0; i < g.n; ++i) {
    const double wi = std::pow(static_cast<double>(g.degrees[i] + 1), gamma);
    double* orow = out.row(i);
    for (i64 j = 0; j < g.n; ++j) {
      const double w = wi * std::pow(static_cast<double>(g.degrees[j] + 1), 1.0 - gamma) / denom;
      const double* xr = x.row(j);
      for (i64 t = 0; t < x.cols; ++t) orow[t] += w * xr[t];
    }
  }
  return out;
}

double distance(const double* x_l, const double* x_inf, i64 f) {
  double s = 0.0;
  for (i64 j = 0; j < f; ++j) {
    const double d = x_l[j] - x_inf[j];
    s += d * d;
  }
  return std::sqrt(s);
}

i64 distance_exit_depth(const DistanceTrace& trace, double ts, i64 tmin, i64 tmax) {
  require(tmin >= 1 && tmin <= tmax, Errc::invalid_argument,
          "distance_exit_depth: need 1 <= T_min <= T_max");
  require(ts >= 0.0, Errc::invalid_argument, "distance_exit_depth: T_s must be nonnegative");
  for (i64 l = tmin; l < tmax; ++l) {
    if (l < static_cast<i64>(trace.delta.size()) && trace.evaluated(l) && trace.delta[l] < ts)
      return l;
  }
  return tmax;
}

DepthBound depth_bound(const Graph& g, double lambda2, double ts, NodeId node,
                       std::span<const i64> realized_depths) {
  require(node >= 0 && node < g.n, Errc::invalid_argument, "depth_bound: node outside graph");

  DepthBound out;
  double best = std::numeric_limits<double>::infinity();
  bool any = false;

  const double arg =
      ts * std::sqrt(static_cast<double>(g.degrees[node] + 1) / static_cast<double>(2 * g.m + g.n));
  if (lambda2 > 0.0 && lambda2 < 1.0 && arg > 0.0 && arg < 1.0) {
    best = std::min(best, std::log(arg) / std::log(lambda2));
    any = true;
  }
  if (!realized_depths.empty()) {
    require(static_cast<i64>(realized_depths.size()) == g.n, Errc::invalid_argument,
            "depth_bound: realized depth vector must cover every node");
    i64 worst = -1;
    for (NodeId v : g.neighbors(node)) worst = std::max(worst, realized_depths[v]);
    if (worst >= 0) {
      best = std::min(best, static_cast<double>(worst + 1));
      any = true;
    }
  }

  out.applicable = any;
  out.value = any ? best : 0.0;
  return out;
}

}  // namespace nai
