#include "nai/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nai/checkpoint.hpp"
#include "nai/dataset.hpp"
#include "nai/verify.hpp"

namespace fs = std::filesystem;

namespace nai {

namespace {

i64 parse_i64(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  i64 v = 0;
  try {
    v = std::stoll(value, &pos);
  } catch (...) {
    pos = 0;
  }
  require(pos == value.size() && !value.empty(), Errc::invalid_argument,
          "config: bad integer for " + key + ": '" + value + "'");
  return v;
}

double parse_f64(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (...) {
    pos = 0;
  }
  require(pos == value.size() && !value.empty(), Errc::invalid_argument,
          "config: bad number for " + key + ": '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  fail(Errc::invalid_argument, "config: bad flag for " + key + ": '" + value + "'");
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string mode_name(CombineMode m) {
  switch (m) {
    case CombineMode::SGC: return "sgc";
    case CombineMode::SIGN: return "sign";
    case CombineMode::S2GC: return "s2gc";
  }
  return "?";
}

std::string policy_name(PolicyMode p) {
  switch (p) {
    case PolicyMode::FixedDepth: return "fixed";
    case PolicyMode::Distance: return "distance";
    case PolicyMode::Gate: return "gate";
  }
  return "?";
}

std::string num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

void log_line(const char* stage, const std::string& msg) {
  std::fprintf(stderr, "[%s] %s\n", stage, msg.c_str());
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "dataset") dataset = value;
  else if (key == "out") out = value;
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_i64(key, value));
  else if (key == "mode") {
    if (value == "sgc") mode = CombineMode::SGC;
    else if (value == "sign") mode = CombineMode::SIGN;
    else if (value == "s2gc") mode = CombineMode::S2GC;
    else fail(Errc::invalid_argument, "config: mode must be sgc|sign|s2gc, got '" + value + "'");
  } else if (key == "k") k = parse_i64(key, value);
  else if (key == "gamma") gamma = parse_f64(key, value);
  else if (key == "s2gc_plus_one") s2gc_plus_one = parse_bool(key, value);
  else if (key == "hidden") hidden = parse_i64(key, value);
  else if (key == "dropout") dropout = parse_f64(key, value);
  else if (key == "lr") lr = parse_f64(key, value);
  else if (key == "weight_decay") weight_decay = parse_f64(key, value);
  else if (key == "epochs") epochs = parse_i64(key, value);
  else if (key == "patience") patience = parse_i64(key, value);
  else if (key == "train_batch") train_batch = parse_i64(key, value);
  else if (key == "val_frac") val_frac = parse_f64(key, value);
  else if (key == "t_single") distill.T_single = parse_f64(key, value);
  else if (key == "lambda_single") distill.lambda_single = parse_f64(key, value);
  else if (key == "t_multi") distill.T_multi = parse_f64(key, value);
  else if (key == "lambda_multi") distill.lambda_multi = parse_f64(key, value);
  else if (key == "r") distill.r = parse_i64(key, value);
  else if (key == "epochs_single") distill.epochs_single = parse_i64(key, value);
  else if (key == "epochs_multi") distill.epochs_multi = parse_i64(key, value);
  else if (key == "lr_single") distill.lr_single = parse_f64(key, value);
  else if (key == "lr_multi") distill.lr_multi = parse_f64(key, value);
  else if (key == "teacher_loss_weight") distill.teacher_loss_weight = parse_f64(key, value);
  else if (key == "single_scale") single_scale = parse_bool(key, value);
  else if (key == "multi_scale") multi_scale = parse_bool(key, value);
  else if (key == "gate_lr") gate_lr = parse_f64(key, value);
  else if (key == "gate_epochs") gate_epochs = parse_i64(key, value);
  else if (key == "gate_tau") gate_tau = parse_f64(key, value);
  else if (key == "policy") {
    if (value == "fixed") policy = PolicyMode::FixedDepth;
    else if (value == "distance") policy = PolicyMode::Distance;
    else if (value == "gate") policy = PolicyMode::Gate;
    else fail(Errc::invalid_argument, "config: policy must be fixed|distance|gate, got '" + value + "'");
  } else if (key == "ts") ts = parse_f64(key, value);
  else if (key == "t_min") t_min = parse_i64(key, value);
  else if (key == "t_max") t_max = parse_i64(key, value);
  else if (key == "shrink_cone") shrink_cone = parse_bool(key, value);
  else if (key == "stationary") {
    if (value == "factorized") stationary_count = StationaryCount::factorized;
    else if (value == "naive") stationary_count = StationaryCount::naive;
    else fail(Errc::invalid_argument, "config: stationary must be factorized|naive, got '" + value + "'");
  } else if (key == "batch") batch = parse_i64(key, value);
  else if (key == "ts_sweep") ts_sweep = value;
  else if (key == "synth_blocks") synth_blocks = parse_i64(key, value);
  else if (key == "synth_block_size") synth_block_size = parse_i64(key, value);
  else if (key == "synth_p_in") synth_p_in = parse_f64(key, value);
  else if (key == "synth_p_out") synth_p_out = parse_f64(key, value);
  else if (key == "synth_f") synth_f = parse_i64(key, value);
  else if (key == "synth_signal") synth_signal = parse_f64(key, value);
  else if (key == "synth_frac_l") synth_frac_l = parse_f64(key, value);
  else if (key == "synth_frac_u") synth_frac_u = parse_f64(key, value);
  else fail(Errc::invalid_argument, "config: unknown key: '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
  if (key == "dataset") return dataset;
  if (key == "out") return out;
  if (key == "seed") return std::to_string(seed);
  if (key == "mode") return mode_name(mode);
  if (key == "k") return std::to_string(k);
  if (key == "gamma") return num(gamma);
  if (key == "s2gc_plus_one") return s2gc_plus_one ? "1" : "0";
  if (key == "hidden") return std::to_string(hidden);
  if (key == "dropout") return num(dropout);
  if (key == "lr") return num(lr);
  if (key == "weight_decay") return num(weight_decay);
  if (key == "epochs") return std::to_string(epochs);
  if (key == "patience") return std::to_string(patience);
  if (key == "train_batch") return std::to_string(train_batch);
  if (key == "val_frac") return num(val_frac);
  if (key == "t_single") return num(distill.T_single);
  if (key == "lambda_single") return num(distill.lambda_single);
  if (key == "t_multi") return num(distill.T_multi);
  if (key == "lambda_multi") return num(distill.lambda_multi);
  if (key == "r") return std::to_string(distill.r);
  if (key == "epochs_single") return std::to_string(distill.epochs_single);
  if (key == "epochs_multi") return std::to_string(distill.epochs_multi);
  if (key == "lr_single") return num(distill.lr_single);
  if (key == "lr_multi") return num(distill.lr_multi);
  if (key == "teacher_loss_weight") return num(distill.teacher_loss_weight);
  if (key == "single_scale") return single_scale ? "1" : "0";
  if (key == "multi_scale") return multi_scale ? "1" : "0";
  if (key == "gate_lr") return num(gate_lr);
  if (key == "gate_epochs") return std::to_string(gate_epochs);
  if (key == "gate_tau") return num(gate_tau);
  if (key == "policy") return policy_name(policy);
  if (key == "ts") return num(ts);
  if (key == "t_min") return std::to_string(t_min);
  if (key == "t_max") return std::to_string(t_max);
  if (key == "shrink_cone") return shrink_cone ? "1" : "0";
  if (key == "stationary")
    return stationary_count == StationaryCount::factorized ? "factorized" : "naive";
  if (key == "batch") return std::to_string(batch);
  if (key == "ts_sweep") return ts_sweep;
  if (key == "synth_blocks") return std::to_string(synth_blocks);
  if (key == "synth_block_size") return std::to_string(synth_block_size);
  if (key == "synth_p_in") return num(synth_p_in);
  if (key == "synth_p_out") return num(synth_p_out);
  if (key == "synth_f") return std::to_string(synth_f);
  if (key == "synth_signal") return num(synth_signal);
  if (key == "synth_frac_l") return num(synth_frac_l);
  if (key == "synth_frac_u") return num(synth_frac_u);
  fail(Errc::invalid_argument, "config: unknown key: '" + key + "'");
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io, "config: cannot open " + path);
  std::string line;
  i64 lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    require(eq != std::string::npos, Errc::format,
            "config: expected key=value at " + path + ":" + std::to_string(lineno));
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void RunConfig::validate() const {
  require(k >= 1, Errc::invalid_argument, "config: k must be >= 1");
  require(gamma >= 0.0 && gamma <= 1.0, Errc::invalid_argument, "config: gamma must be in [0,1]");
  require(hidden >= 0, Errc::invalid_argument, "config: hidden must be >= 0");
  require(dropout >= 0.0 && dropout < 1.0, Errc::invalid_argument,
          "config: dropout must be in [0,1)");
  require(lr > 0.0 && gate_lr > 0.0, Errc::invalid_argument, "config: learning rates must be > 0");
  require(weight_decay >= 0.0, Errc::invalid_argument, "config: weight_decay must be >= 0");
  require(epochs >= 1 && gate_epochs >= 1, Errc::invalid_argument,
          "config: epoch counts must be >= 1");
  require(patience >= 0, Errc::invalid_argument, "config: patience must be >= 0");
  require(train_batch >= 0, Errc::invalid_argument, "config: train_batch must be >= 0");
  require(val_frac > 0.0 && val_frac < 1.0, Errc::invalid_argument,
          "config: val_frac must be in (0,1)");
  require(gate_tau > 0.0, Errc::invalid_argument, "config: gate_tau must be > 0");
  require(ts >= 0.0, Errc::invalid_argument, "config: ts must be >= 0");
  require(t_min >= 1, Errc::invalid_argument, "config: t_min must be >= 1");
  require(t_max >= 0, Errc::invalid_argument, "config: t_max must be >= 0");
  const i64 resolved_t_max = t_max == 0 ? k : t_max;
  require(t_min <= resolved_t_max && resolved_t_max <= k, Errc::invalid_argument,
          "config: need t_min <= t_max <= k");
  require(batch >= 1, Errc::invalid_argument, "config: batch must be >= 1");
  if (synth_blocks != 0 || synth_block_size != 0) {
    require(synth_blocks >= 1 && synth_block_size >= 1, Errc::invalid_argument,
            "config: synth_blocks and synth_block_size must both be >= 1");
    require(synth_f >= 1, Errc::invalid_argument, "config: synth_f must be >= 1");
    require(synth_p_in >= 0.0 && synth_p_in <= 1.0 && synth_p_out >= 0.0 && synth_p_out <= 1.0,
            Errc::invalid_argument, "config: synth probabilities must be in [0,1]");
    require(synth_frac_l >= 0.0 && synth_frac_u >= 0.0 && synth_frac_l + synth_frac_u <= 1.0,
            Errc::invalid_argument, "config: synth split fractions must be >= 0 and sum <= 1");
  }
}

InferencePolicy RunConfig::inference_policy() const {
  InferencePolicy p;
  p.mode = policy;
  p.ts = ts;
  p.t_min = t_min;
  p.t_max = t_max == 0 ? k : t_max;
  p.shrink_cone = shrink_cone;
  p.stationary_count = stationary_count;
  return p;
}

namespace {

std::string stage_dir(const RunConfig& cfg, const char* name) {
  const std::string dir = cfg.out + "/" + name;
  fs::create_directories(dir);
  return dir;
}

std::string default_dataset_path(const RunConfig& cfg) {
  return cfg.out + "/precompute/dataset.naib";
}

DatasetBundle obtain_dataset(const RunConfig& cfg, bool allow_synth) {
  if (!cfg.dataset.empty()) return load_bundle(cfg.dataset);
  const std::string path = default_dataset_path(cfg);
  if (fs::exists(path)) return load_bundle(path);
  require(allow_synth, Errc::state,
          "missing dataset: set dataset= or run precompute with synth_* keys first");
  require(cfg.synth_blocks >= 1 && cfg.synth_block_size >= 1, Errc::invalid_argument,
          "config: no dataset given; set dataset= or synth_blocks/synth_block_size");
  std::vector<i64> sizes(static_cast<std::size_t>(cfg.synth_blocks), cfg.synth_block_size);
  DatasetBundle bundle = synth_sbm(sizes, cfg.synth_p_in, cfg.synth_p_out, cfg.synth_f,
                                   cfg.synth_signal, cfg.seed, cfg.synth_frac_l, cfg.synth_frac_u);
  save_bundle(bundle, path);
  log_line("precompute", "synthesized dataset -> " + path);
  return bundle;
}

std::string require_artifact(const std::string& path, const char* hint) {
  require(fs::exists(path), Errc::state,
          "missing upstream artifact " + path + "; run " + hint + " first");
  return path;
}

DepthCache load_cache_checked(const RunConfig& cfg) {
  DepthCache cache =
      load_depth_cache(require_artifact(cfg.out + "/precompute/train-cache.bin", "precompute"));
  require(cache.k == cfg.k && cache.gamma == cfg.gamma && cache.mode == cfg.mode &&
              cache.s2gc_divisor_plus_one == cfg.s2gc_plus_one,
          Errc::state, "stale precompute cache; rerun precompute with this config");
  return cache;
}

DepthFeatures features_of(const DepthCache& cache) {
  DepthFeatures df;
  df.mode = cache.mode;
  df.k = cache.k;
  df.stack = cache.stack;
  df.s2gc_divisor_plus_one = cache.s2gc_divisor_plus_one;
  return df;
}

Matrix view_onehot(const DepthCache& cache, const DatasetBundle& bundle) {
  std::vector<i64> labels;
  labels.reserve(cache.view_nodes.size());
  for (i64 g : cache.view_nodes) {
    require(g >= 0 && g < bundle.graph.n, Errc::state,
            "stale precompute cache; node ids exceed the dataset");
    labels.push_back(bundle.labels[static_cast<std::size_t>(g)]);
  }
  return onehot_labels(labels, bundle.c);
}

// Deterministic validation carve-out from the labeled split.
std::pair<std::vector<i64>, std::vector<i64>> carve_val(std::span<const i64> v_l, double frac,
                                                        std::uint64_t seed) {
  require(v_l.size() >= 2, Errc::invalid_argument,
          "labeled split too small to carve a validation set");
  std::vector<i64> ids(v_l.begin(), v_l.end());
  Rng rng(stage_seed(seed, "val-split"));
  rng.shuffle(ids);
  const i64 nv = std::max<i64>(1, static_cast<i64>(std::floor(frac * static_cast<double>(ids.size()))));
  std::vector<i64> val(ids.begin(), ids.begin() + nv);
  std::vector<i64> train(ids.begin() + nv, ids.end());
  require(!train.empty(), Errc::invalid_argument, "val_frac leaves no training rows");
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

int stage_precompute(const RunConfig& cfg) {
  const std::string dir = stage_dir(cfg, "precompute");
  DatasetBundle bundle = obtain_dataset(cfg, true);
  TrainView view = inductive_train_view(bundle);
  NormalizedAdjacency adj = normalize(view.graph, cfg.gamma);
  DepthFeatures df = precompute_depths(adj, view.features, cfg.k, cfg.mode);
  df.s2gc_divisor_plus_one = cfg.s2gc_plus_one;
  StationaryState st = stationary(view.graph, view.features, cfg.gamma);

  DepthCache cache;
  cache.gamma = cfg.gamma;
  cache.mode = cfg.mode;
  cache.s2gc_divisor_plus_one = cfg.s2gc_plus_one;
  cache.k = cfg.k;
  cache.stack = std::move(df.stack);
  cache.x_inf = st.expand_all();
  cache.view_nodes = view.global_of;
  cache.v_l_local = view.v_l_local;
  cache.v_u_local = view.v_u_local;
  save_depth_cache(dir + "/train-cache.bin", cache);
  log_line("precompute", "train view n=" + std::to_string(view.graph.n) + " m=" +
                             std::to_string(view.graph.m) + ", depths 0.." + std::to_string(cfg.k) +
                             " and stationary rows cached");
  return 0;
}

int stage_train_teacher(const RunConfig& cfg) {
  const std::string dir = stage_dir(cfg, "train-teacher");
  DatasetBundle bundle = obtain_dataset(cfg, false);
  DepthCache cache = load_cache_checked(cfg);
  Matrix labels = view_onehot(cache, bundle);
  auto [train_idx, val_idx] = carve_val(cache.v_l_local, cfg.val_frac, cfg.seed);

  Rng init(stage_seed(cfg.seed, "stack-init"));
  ClassifierStack stack = make_stack(cfg.mode, cfg.k, cache.stack[0].cols, bundle.c, cfg.hidden,
                                     cfg.dropout, init);
  TrainHyper hyper;
  hyper.lr = cfg.lr;
  hyper.weight_decay = cfg.weight_decay;
  hyper.epochs = cfg.epochs;
  hyper.patience = cfg.patience;
  hyper.batch_size = cfg.train_batch;
  const double best = train_teacher(stack, features_of(cache), labels, train_idx, val_idx, hyper,
                                    cfg.seed);
  save_classifiers(dir + "/stack.bin", stack);
  log_line("train-teacher", "depth-" + std::to_string(cfg.k) + " teacher val accuracy " + num(best) +
                                " (" + std::to_string(train_idx.size()) + " train / " +
                                std::to_string(val_idx.size()) + " val rows)");
  return 0;
}

int stage_distill(const RunConfig& cfg) {
  const std::string dir = stage_dir(cfg, "distill");
  DatasetBundle bundle = obtain_dataset(cfg, false);
  DepthCache cache = load_cache_checked(cfg);
  Matrix labels = view_onehot(cache, bundle);
  ClassifierStack stack =
      load_classifiers(require_artifact(cfg.out + "/train-teacher/stack.bin", "train-teacher"));
  cfg.distill.validate(cfg.k);

  std::vector<i64> distill_idx(cache.v_l_local.begin(), cache.v_l_local.end());
  distill_idx.insert(distill_idx.end(), cache.v_u_local.begin(), cache.v_u_local.end());
  std::sort(distill_idx.begin(), distill_idx.end());

  DistillConfig dcfg = cfg.distill;
  if (!cfg.single_scale) dcfg.lambda_single = 0.0;  // stage one becomes plain CE
  DepthFeatures df = features_of(cache);
  single_scale_distill(stack, df, labels, cache.v_l_local, distill_idx, dcfg, cfg.seed);
  if (cfg.multi_scale) multi_scale_distill(stack, df, labels, cache.v_l_local, distill_idx, dcfg, cfg.seed);

  save_classifiers(dir + "/stack.bin", stack);
  std::ostringstream os;
  os << "students trained (single_scale lambda=" << dcfg.lambda_single
     << ", multi_scale=" << (cfg.multi_scale ? "on" : "off") << "); labeled accuracy by depth:";
  for (i64 d = 1; d <= cfg.k; ++d) {
    Matrix probs = predict(stack.net(d), combine(df, d));
    os << " " << num(accuracy(probs, labels, cache.v_l_local));
  }
  log_line("distill", os.str());
  return 0;
}

int stage_train_gates(const RunConfig& cfg) {
  const std::string dir = stage_dir(cfg, "train-gates");
  DatasetBundle bundle = obtain_dataset(cfg, false);
  DepthCache cache = load_cache_checked(cfg);
  Matrix labels = view_onehot(cache, bundle);
  ClassifierStack stack =
      load_classifiers(require_artifact(cfg.out + "/distill/stack.bin", "distill"));

  Rng init(stage_seed(cfg.seed, "gates-init"));
  GateStack gates = make_gates(cfg.k, cache.stack[0].cols, init);
  GateHyper hyper;
  hyper.lr = cfg.gate_lr;
  hyper.weight_decay = cfg.weight_decay;
  hyper.epochs = cfg.gate_epochs;
  hyper.tau = cfg.gate_tau;
  train_gates(gates, stack, features_of(cache), cache.x_inf, labels, cache.v_l_local, hyper,
              cfg.seed);
  save_gates(dir + "/gates.bin", gates);
  log_line("train-gates", std::to_string(gates.gate_count()) + " gates trained on " +
                              std::to_string(cache.v_l_local.size()) + " labeled rows");
  return 0;
}

struct Deployment {
  DatasetBundle bundle;
  ModelBundle model;
  NormalizedAdjacency adj;
};

Deployment deploy(const RunConfig& cfg, bool need_gates) {
  Deployment d;
  d.bundle = obtain_dataset(cfg, false);
  const std::string distilled = cfg.out + "/distill/stack.bin";
  const std::string teacher_only = cfg.out + "/train-teacher/stack.bin";
  if (fs::exists(distilled)) d.model.stack = load_classifiers(distilled);
  else d.model.stack = load_classifiers(require_artifact(teacher_only, "train-teacher"));
  require(d.model.stack.k == cfg.k, Errc::state,
          "checkpoint depth " + std::to_string(d.model.stack.k) + " does not match config k=" +
              std::to_string(cfg.k));
  require(d.model.stack.f == d.bundle.f() && d.model.stack.c == d.bundle.c, Errc::state,
          "checkpoint shaped for a different dataset");
  d.model.gamma = cfg.gamma;
  d.model.s2gc_divisor_plus_one = cfg.s2gc_plus_one;
  if (need_gates)
    d.model.gates = load_gates(require_artifact(cfg.out + "/train-gates/gates.bin", "train-gates"));
  d.adj = normalize(d.bundle.graph, cfg.gamma);
  require(!d.bundle.v_test.empty(), Errc::state, "dataset has no test split to infer on");
  return d;
}

PredictionReport run_batches(const Deployment& d, std::span<const i64> nodes,
                             const InferencePolicy& policy, i64 batch_size) {
  PredictionReport merged;
  for (std::size_t start = 0; start < nodes.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(nodes.size(), start + static_cast<std::size_t>(batch_size));
    std::span<const i64> chunk = nodes.subspan(start, stop - start);
    PredictionReport rep = infer_batch(d.model, d.bundle.graph, d.adj, d.bundle.features, chunk,
                                       policy);
    if (merged.nodes.empty()) {
      merged = std::move(rep);
      continue;
    }
    merged.nodes.insert(merged.nodes.end(), rep.nodes.begin(), rep.nodes.end());
    merged.exit_depth.insert(merged.exit_depth.end(), rep.exit_depth.begin(), rep.exit_depth.end());
    merged.predicted.insert(merged.predicted.end(), rep.predicted.begin(), rep.predicted.end());
    merged.max_prob.insert(merged.max_prob.end(), rep.max_prob.begin(), rep.max_prob.end());
    for (std::size_t i = 0; i < merged.histogram.size(); ++i)
      merged.histogram[i] += rep.histogram[i];
    for (int p = 0; p < 5; ++p) {
      merged.ledger.macs[p] += rep.ledger.macs[p];
      merged.times.ms[p] += rep.times.ms[p];
    }
    for (std::size_t i = 0; i < merged.trace.rows_per_depth.size(); ++i) {
      merged.trace.rows_per_depth[i] += rep.trace.rows_per_depth[i];
      merged.trace.nnz_per_depth[i] += rep.trace.nnz_per_depth[i];
      merged.trace.tested_per_depth[i] += rep.trace.tested_per_depth[i];
    }
    merged.trace.cone_width += rep.trace.cone_width;
    merged.trace.batch_size += rep.trace.batch_size;
  }
  return merged;
}

double test_accuracy(const PredictionReport& rep, const DatasetBundle& bundle) {
  i64 hit = 0;
  for (std::size_t i = 0; i < rep.nodes.size(); ++i)
    hit += rep.predicted[i] == bundle.labels[static_cast<std::size_t>(rep.nodes[i])] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(rep.nodes.size());
}

int stage_infer(const RunConfig& cfg) {
  const std::string dir = stage_dir(cfg, "infer");
  Deployment d = deploy(cfg, cfg.policy == PolicyMode::Gate);
  const InferencePolicy policy = cfg.inference_policy();
  PredictionReport rep = run_batches(d, d.bundle.v_test, policy, cfg.batch);
  const double acc = test_accuracy(rep, d.bundle);
  write_predictions(rep, dir + "/predictions.csv");

  std::ofstream summary(dir + "/summary.txt");
  require(summary.good(), Errc::io, "cannot write " + dir + "/summary.txt");
  summary << "policy " << policy_name(cfg.policy) << "\n";
  summary << "nodes " << rep.nodes.size() << "\n";
  summary << "accuracy " << num(acc) << "\n";
  summary << "exits";
  for (std::size_t dpt = 0; dpt < rep.histogram.size(); ++dpt)
    summary << " " << (dpt + 1) << ":" << rep.histogram[dpt];
  summary << "\n";
  for (int p = 0; p < 5; ++p)
    summary << "macs_" << phase_name(static_cast<Phase>(p)) << " " << rep.ledger.macs[p] << "\n";
  summary << "macs_total " << rep.ledger.total() << "\n";
  summary << "macs_fp " << rep.ledger.fp() << "\n";
  const double n = static_cast<double>(rep.nodes.size());
  summary << "per_node_mmacs " << num(static_cast<double>(rep.ledger.total()) / n / 1e6) << "\n";
  summary << "per_node_fp_mmacs " << num(static_cast<double>(rep.ledger.fp()) / n / 1e6) << "\n";
  require(summary.good(), Errc::io, "write failed: " + dir + "/summary.txt");

  log_line("infer", std::to_string(rep.nodes.size()) + " nodes, accuracy " + num(acc) +
                        ", fp MACs/node " + num(static_cast<double>(rep.ledger.fp()) / n));
  return 0;
}

BenchRow bench_method(const Deployment& d, const std::string& name, const InferencePolicy& policy,
                      i64 batch_size, int reps) {
  std::vector<PredictionReport> runs;
  for (int rep = 0; rep < reps; ++rep)
    runs.push_back(run_batches(d, d.bundle.v_test, policy, batch_size));
  for (const PredictionReport& r : runs)
    require(r.ledger.macs == runs.front().ledger.macs, Errc::numeric,
            "bench: MAC counts varied across repetitions");
  std::vector<std::size_t> order(runs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return runs[a].times.total() < runs[b].times.total();
  });
  const PredictionReport& median = runs[order[order.size() / 2]];
  return make_row(name, test_accuracy(median, d.bundle), median.ledger, median.times,
                  static_cast<i64>(median.nodes.size()));
}

int stage_bench(const RunConfig& cfg) {
  const std::string dir = stage_dir(cfg, "bench");
  const bool have_gates = fs::exists(cfg.out + "/train-gates/gates.bin");
  Deployment d = deploy(cfg, have_gates);
  const int reps = 5;

  InferencePolicy fixed;
  fixed.mode = PolicyMode::FixedDepth;
  fixed.t_min = cfg.k;
  fixed.t_max = cfg.k;
  fixed.stationary_count = cfg.stationary_count;

  InferencePolicy dist = cfg.inference_policy();
  dist.mode = PolicyMode::Distance;

  std::vector<BenchRow> rows;
  rows.push_back(bench_method(d, "vanilla", fixed, cfg.batch, reps));
  rows.push_back(bench_method(d, "nai_d", dist, cfg.batch, reps));
  if (have_gates) {
    InferencePolicy gate = dist;
    gate.mode = PolicyMode::Gate;
    rows.push_back(bench_method(d, "nai_g", gate, cfg.batch, reps));
  }

  std::ofstream table(dir + "/table.csv");
  require(table.good(), Errc::io, "cannot write " + dir + "/table.csv");
  table << csv_header() << "\n";
  for (const BenchRow& row : rows) table << to_csv(row) << "\n";
  require(table.good(), Errc::io, "write failed: " + dir + "/table.csv");
  std::fprintf(stderr, "%s", to_table(rows).c_str());

  if (!cfg.ts_sweep.empty()) {
    double lo = 0.0, hi = 0.0, step = 0.0;
    char colon1 = 0, colon2 = 0;
    std::istringstream ss(cfg.ts_sweep);
    ss >> lo >> colon1 >> hi >> colon2 >> step;
    require(!ss.fail() && colon1 == ':' && colon2 == ':' && step > 0.0 && lo <= hi,
            Errc::invalid_argument, "config: ts_sweep must be lo:hi:step with step > 0");
    std::ofstream sweep(dir + "/sweep.csv");
    require(sweep.good(), Errc::io, "cannot write " + dir + "/sweep.csv");
    sweep << "ts,acc,mmacs,fp_mmacs\n";
    for (double t = lo; t <= hi + 1e-12; t += step) {
      InferencePolicy p = dist;
      p.ts = t;
      PredictionReport rep = run_batches(d, d.bundle.v_test, p, cfg.batch);
      const double n = static_cast<double>(rep.nodes.size());
      sweep << num(t) << "," << num(test_accuracy(rep, d.bundle)) << ","
            << num(static_cast<double>(rep.ledger.total()) / n / 1e6) << ","
            << num(static_cast<double>(rep.ledger.fp()) / n / 1e6) << "\n";
    }
    require(sweep.good(), Errc::io, "write failed: " + dir + "/sweep.csv");
    log_line("bench", "threshold sweep written to " + dir + "/sweep.csv");
  }
  return 0;
}

int stage_verify(const RunConfig& cfg) {
  const std::string dir = stage_dir(cfg, "verify");
  std::vector<CheckResult> results = verify_all(cfg.seed);
  std::ofstream report(dir + "/report.txt");
  require(report.good(), Errc::io, "cannot write " + dir + "/report.txt");
  for (const CheckResult& r : results) {
    const std::string line = std::string(r.pass ? "PASS" : "FAIL") + " " + r.name + " (" +
                             r.detail + ")" + (r.required ? "" : " [informational]");
    report << line << "\n";
    log_line("verify", line);
  }
  require(report.good(), Errc::io, "write failed: " + dir + "/report.txt");
  return all_passed(results) ? 0 : 1;
}

}  // namespace

int run_stage(const RunConfig& cfg, const std::string& stage) {
  require(!cfg.out.empty(), Errc::invalid_argument, "config: out directory required");
  cfg.validate();
  if (stage == "precompute") return stage_precompute(cfg);
  if (stage == "train-teacher") return stage_train_teacher(cfg);
  if (stage == "distill") return stage_distill(cfg);
  if (stage == "train-gates") return stage_train_gates(cfg);
  if (stage == "infer") return stage_infer(cfg);
  if (stage == "bench") return stage_bench(cfg);
  if (stage == "verify") return stage_verify(cfg);
  fail(Errc::invalid_argument, "unknown stage: '" + stage + "'");
}

}  // namespace nai
