#pragma once
// Binary model checkpoints (magic "NAI1", versioned, little-endian). One file
// holds either a classifier stack or a gate stack; loads are bit-exact round
// trips of what was saved.

#include <string>

#include "nai/classifiers.hpp"
#include "nai/gates.hpp"

namespace nai {

void save_classifiers(const std::string& path, const ClassifierStack& stack);
ClassifierStack load_classifiers(const std::string& path);

void save_gates(const std::string& path, const GateStack& gates);
GateStack load_gates(const std::string& path);

// Precomputed training-side state: the inductive view's depth stack and
// stationary rows plus enough metadata to detect a stale cache.
struct DepthCache {
  double gamma = 0.5;
  CombineMode mode = CombineMode::SGC;
  bool s2gc_divisor_plus_one = false;
  i64 k = 0;
  std::vector<Matrix> stack;  // depths 0..k, view rows
  Matrix x_inf;               // view rows
  std::vector<i64> view_nodes;  // global node id per view row
  std::vector<i64> v_l_local;
  std::vector<i64> v_u_local;
};

void save_depth_cache(const std::string& path, const DepthCache& cache);
DepthCache load_depth_cache(const std::string& path);

}  // namespace nai
