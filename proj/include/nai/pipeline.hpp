#pragma once
// Stage runner behind the command-line surface. A RunConfig carries every
// knob as typed fields, settable from key=value text; stages read and write
// artifacts under <out>/<stage-name>/ and log progress to stderr.

#include <cstdint>
#include <string>

#include "nai/distill.hpp"
#include "nai/engine.hpp"

namespace nai {

struct RunConfig {
  std::string dataset;  // .naib path; empty = synthesize at precompute
  std::string out;
  std::uint64_t seed = 1;

  CombineMode mode = CombineMode::SGC;
  i64 k = 7;
  double gamma = 0.5;
  bool s2gc_plus_one = false;

  // Teacher training.
  i64 hidden = 0;
  double dropout = 0.3;
  double lr = 0.001;
  double weight_decay = 0.0;
  i64 epochs = 200;
  i64 patience = 50;
  i64 train_batch = 0;  // minibatch rows, 0 = full batch
  double val_frac = 0.25;  // carved out of the labeled split for early stopping

  DistillConfig distill;
  bool single_scale = true;  // off = stage one degenerates to plain CE
  bool multi_scale = true;   // off = skip stage two

  double gate_lr = 0.01;
  i64 gate_epochs = 100;
  double gate_tau = 1.0;

  PolicyMode policy = PolicyMode::Distance;
  double ts = 0.1;
  i64 t_min = 1;
  i64 t_max = 0;  // 0 = k
  bool shrink_cone = false;
  StationaryCount stationary_count = StationaryCount::factorized;
  i64 batch = 500;  // inference batch size

  std::string ts_sweep;  // "lo:hi:step", bench only

  // Synthetic dataset source, used when dataset is empty.
  i64 synth_blocks = 0;
  i64 synth_block_size = 0;
  double synth_p_in = 0.02;
  double synth_p_out = 0.002;
  i64 synth_f = 32;
  double synth_signal = 0.5;
  double synth_frac_l = 0.4;
  double synth_frac_u = 0.3;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  void load_file(const std::string& path);
  void validate() const;  // field-level messages

  InferencePolicy inference_policy() const;  // t_max resolved against k
};

// Stage names: precompute, train-teacher, distill, train-gates, infer,
// bench, verify. Returns the process exit status (nonzero only for failed
// verification); anything else wrong throws Error.
int run_stage(const RunConfig& cfg, const std::string& stage);

}  // namespace nai
