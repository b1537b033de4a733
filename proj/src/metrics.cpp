#include "nai/metrics.hpp"

#include <cstdio>

namespace nai {

BenchRow make_row(const std::string& method, double acc, const MacLedger& ledger,
                  const PhaseTimes& times, i64 nodes) {
  require(nodes > 0, Errc::invalid_argument, "make_row: node count must be positive");
  const double nd = static_cast<double>(nodes);
  BenchRow row;
  row.method = method;
  row.acc = acc;
  row.mmacs = static_cast<double>(ledger.total()) / nd / 1e6;
  row.fp_mmacs = static_cast<double>(ledger.fp()) / nd / 1e6;
  row.time_ms = times.total() / nd;
  row.fp_time_ms = times.fp() / nd;
  return row;
}

std::string csv_header() { return "method,acc,mmacs,fp_mmacs,time_ms,fp_time_ms"; }

std::string to_csv(const BenchRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%.6f,%.9f,%.9f,%.6f,%.6f", row.method.c_str(), row.acc,
                row.mmacs, row.fp_mmacs, row.time_ms, row.fp_time_ms);
  return buf;
}

std::string to_table(const std::vector<BenchRow>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-18s %8s %12s %12s %10s %10s\n", "method", "acc", "mmacs",
                "fp_mmacs", "time_ms", "fp_ms");
  out += buf;
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-18s %8.4f %12.6f %12.6f %10.4f %10.4f\n", r.method.c_str(),
                  r.acc, r.mmacs, r.fp_mmacs, r.time_ms, r.fp_time_ms);
    out += buf;
  }
  return out;
}

}  // namespace nai
