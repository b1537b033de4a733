#pragma once
// Depth-layered feature propagation, depth combinators, the closed-form
// stationary state, smoothing distances, and personalized depth selection.

#include <limits>
#include <span>
#include <vector>

#include "nai/graph.hpp"
#include "nai/common.hpp"

namespace nai {

using FeatureMatrix = Matrix;

enum class CombineMode { SGC, SIGN, S2GC };

const char* combine_mode_name(CombineMode mode);

struct DepthFeatures {
  CombineMode mode = CombineMode::SGC;
  i64 k = 0;
  // stack[l] is the l-step propagated feature matrix; stack[0] is the input.
  std::vector<Matrix> stack;
  // The depth-averaging combinator literally divides the 0..l sum by l. The
  // l+1-term alternative is available behind this flag; default stays literal.
  bool s2gc_divisor_plus_one = false;
};

// Width of combine() output at depth l for feature width f.
i64 combined_width(CombineMode mode, i64 l, i64 f);

// One application of the normalized operator to a single output row.
// local_of maps a global column id to the row index inside x; pass nullptr
// when x is indexed by global ids. Every caller accumulates in CSR order, so
// full-graph and cone-restricted runs agree bit for bit.
void spmm_row_into(const NormalizedAdjacency& adj, NodeId i, const Matrix& x,
                   const i64* local_of, double* out);

Matrix spmm_step(const NormalizedAdjacency& adj, const Matrix& x);

// Subset form: fills only the requested rows of out (sized like x); other
// rows are left untouched.
void spmm_step_rows(const NormalizedAdjacency& adj, const Matrix& x,
                    std::span<const NodeId> rows, Matrix& out);

DepthFeatures precompute_depths(const NormalizedAdjacency& adj, const Matrix& x, i64 k,
                                CombineMode mode);

// Classifier input at depth l: SGC passes stack[l] through, SIGN concatenates
// stack[0..l], S2GC averages them (sum / l, see the divisor flag above; l = 0
// passes the input through).
Matrix combine(const DepthFeatures& df, i64 l);

// Same combinator applied to a subset of rows of an arbitrary stack (the
// inference engine owns cone-local stacks). rows index into the stack
// matrices. out is resized to rows.size() x width.
void combine_rows(CombineMode mode, bool s2gc_divisor_plus_one, std::span<const Matrix> stack,
                  i64 l, std::span<const i64> rows, Matrix& out);

// Rank-one stationary state: X_inf[i] = coeff[i] * aggregate with
//   coeff[i]  = (d_i + 1)^gamma / (2m + n)
//   aggregate = sum_j (d_j + 1)^(1 - gamma) x_j.
struct StationaryState {
  double gamma = 0.5;
  double denom = 0.0;  // 2m + n
  std::vector<double> coeff;
  std::vector<double> aggregate;

  i64 f() const { return static_cast<i64>(aggregate.size()); }
  void expand_row(i64 node, double* out) const {
    const double a = coeff[node];
    for (i64 j = 0; j < f(); ++j) out[j] = a * aggregate[j];
  }
  Matrix expand(std::span<const NodeId> nodes) const;
  Matrix expand_all() const;
};

StationaryState stationary(const Graph& g, const Matrix& x, double gamma);

// Brute-force dense evaluation of the infinite-propagation weights applied to
// x; reference for the rank-one identity, O(n^2 f).
Matrix stationary_naive(const Graph& g, const Matrix& x, double gamma);

// Euclidean distance between a propagated row and the stationary row.
double distance(const double* x_l, const double* x_inf, i64 f);

struct DistanceTrace {
  // delta[l] for depth l >= 1; NaN marks depths that were never evaluated.
  std::vector<double> delta;

  explicit DistanceTrace(i64 k)
      : delta(static_cast<std::size_t>(k) + 1, std::numeric_limits<double>::quiet_NaN()) {}
  void set(i64 l, double d) { delta[l] = d; }
  bool evaluated(i64 l) const { return !std::isnan(delta[l]); }
};

// Smallest l in [T_min, T_max) whose evaluated distance falls strictly below
// T_s, else T_max. T_min == T_max inspects nothing.
i64 distance_exit_depth(const DistanceTrace& trace, double ts, i64 tmin, i64 tmax);

struct DepthBound {
  bool applicable = false;
  double value = 0.0;
};

// Union bound on the personalized depth: min of the spectral term
// log_{lambda2}(T_s * sqrt((d_i+1)/(2m+n))) and max neighbor realized depth
// plus one. Either term may be inapplicable (guards below); when both are,
// applicable = false. realized_depths may be empty to skip the neighbor term.
DepthBound depth_bound(const Graph& g, double lambda2, double ts, NodeId node,
                       std::span<const i64> realized_depths);

}  // namespace nai
