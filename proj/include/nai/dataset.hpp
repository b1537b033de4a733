#pragma once
// Dataset bundles: graph + features + labels + inductive splits, their
// binary persistence, the induced training-subgraph view, and the seeded
// block-model generator used for desk-scale experiments.

#include <span>
#include <string>
#include <vector>

#include "nai/common.hpp"
#include "nai/graph.hpp"

namespace nai {

struct DatasetBundle {
  Graph graph;
  Matrix features;          // n x f
  std::vector<i64> labels;  // class id per node, -1 when unknown
  i64 c = 0;
  std::vector<i64> v_l;     // labeled train
  std::vector<i64> v_u;     // unlabeled train
  std::vector<i64> v_test;

  i64 f() const { return features.cols; }
  // Splits disjoint and in range, labels present on v_l and v_test.
  void validate() const;
};

// Versioned little-endian blob, magic "NAIB". Layout: header (version, n, m,
// f, c, split sizes), CSR offsets and columns, feature block as raw 64-bit
// reals, labels, then the three split id lists.
void save_bundle(const DatasetBundle& bundle, const std::string& path);
DatasetBundle load_bundle(const std::string& path);

// The inductive training world: subgraph induced on v_l + v_u with rows,
// labels and splits re-indexed to it. global_of maps local -> global;
// local_of is -1 for nodes outside the view.
struct TrainView {
  Graph graph;
  Matrix features;
  std::vector<i64> labels;
  std::vector<i64> global_of;
  std::vector<i64> local_of;
  std::vector<i64> v_l_local;
  std::vector<i64> v_u_local;
};
TrainView inductive_train_view(const DatasetBundle& bundle);

// Stochastic block model with Gaussian features. Each class gets a random
// unit direction scaled by class_signal as its mean; labels are block ids.
// Splits are stratified per block: frac_l labeled, frac_u unlabeled, the
// rest test. Fully determined by seed.
DatasetBundle synth_sbm(std::span<const i64> sizes, double p_in, double p_out, i64 f,
                        double class_signal, std::uint64_t seed, double frac_l = 0.4,
                        double frac_u = 0.3);

// Text import: one "u v" pair per line, blank lines and lines starting with
// '#' skipped. Node count is max id + 1, or n_hint if larger.
Graph load_edge_list(const std::string& path, i64 n_hint = 0);

// Newline-delimited node ids with the same comment rules.
std::vector<i64> load_id_list(const std::string& path);

// One-hot rows; a -1 label leaves its row zero.
Matrix onehot_labels(std::span<const i64> labels, i64 c);

}  // namespace nai
