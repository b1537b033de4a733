#pragma once
// Multiply-accumulate ledger and wall-clock bookkeeping.
//
// Counting conventions, used consistently by the engine and the verifier:
//   spmm           nnz_touched * f   (one MAC per stored entry per column)
//   dense          rows * in * out
//   stationary     factorized: n*f aggregate + batch*f expansion
//                  naive: batch*n*f (dense-limit convention, for comparison
//                  against the classical complexity table)
//   distance test  f per evaluation
//   gate decision  4f per evaluation ((2f x 2) matvec)
// Sampling (frontier BFS) carries time but no MACs.

#include <array>
#include <chrono>
#include <string>
#include <vector>

#include "nai/common.hpp"

namespace nai {

enum class Phase : int {
  stationary = 0,
  propagation = 1,
  distance_or_gate = 2,
  classification = 3,
  sampling = 4,
};

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::stationary: return "stationary";
    case Phase::propagation: return "propagation";
    case Phase::distance_or_gate: return "distance_or_gate";
    case Phase::classification: return "classification";
    case Phase::sampling: return "sampling";
  }
  return "?";
}

enum class StationaryCount { factorized, naive };

inline i64 count_spmm(i64 nnz_touched, i64 f) { return nnz_touched * f; }
inline i64 count_dense(i64 rows, i64 in_dim, i64 out_dim) { return rows * in_dim * out_dim; }
inline i64 count_stationary(i64 n, i64 f, i64 batch, StationaryCount mode) {
  return mode == StationaryCount::factorized ? n * f + batch * f : batch * n * f;
}

struct MacLedger {
  std::array<i64, 5> macs{};
  StationaryCount stationary_mode = StationaryCount::factorized;

  void add(Phase p, i64 count) {
    assert(count >= 0);
    macs[static_cast<int>(p)] += count;
  }
  i64 phase(Phase p) const { return macs[static_cast<int>(p)]; }
  i64 total() const {
    i64 s = 0;
    for (i64 v : macs) s += v;
    return s;
  }
  // Feature processing: propagation plus the exit decision.
  i64 fp() const { return phase(Phase::propagation) + phase(Phase::distance_or_gate); }
};

struct PhaseTimes {
  std::array<double, 5> ms{};

  void add(Phase p, double t) { ms[static_cast<int>(p)] += t; }
  double total() const {
    double s = 0.0;
    for (double v : ms) s += v;
    return s;
  }
  double fp() const {
    return ms[static_cast<int>(Phase::propagation)] + ms[static_cast<int>(Phase::distance_or_gate)];
  }
};

class PhaseTimer {
 public:
  PhaseTimer(PhaseTimes& times, Phase phase)
      : times_(times), phase_(phase), start_(std::chrono::steady_clock::now()) {}
  ~PhaseTimer() {
    const auto end = std::chrono::steady_clock::now();
    times_.add(phase_, std::chrono::duration<double, std::milli>(end - start_).count());
  }

 private:
  PhaseTimes& times_;
  Phase phase_;
  std::chrono::steady_clock::time_point start_;
};

// One benchmark table row. mmacs/time columns are per-node averages over the
// evaluated batch set (counts divided by node count), MACs in millions.
struct BenchRow {
  std::string method;
  double acc = 0.0;
  double mmacs = 0.0;
  double fp_mmacs = 0.0;
  double time_ms = 0.0;
  double fp_time_ms = 0.0;
};

BenchRow make_row(const std::string& method, double acc, const MacLedger& ledger,
                  const PhaseTimes& times, i64 nodes);

std::string csv_header();
std::string to_csv(const BenchRow& row);
std::string to_table(const std::vector<BenchRow>& rows);

}  // namespace nai
