#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "nai.h"

namespace {

int apply(nai_config* cfg, const std::string& key, const std::string& value) {
  const int rc = nai_config_set(cfg, key.c_str(), value.c_str());
  if (rc != NAI_OK) std::fprintf(stderr, "error: %s\n", nai_last_error());
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Node-adaptive inference for precomputed-propagation graph models"};
  app.set_version_flag("--version", nai_version());
  app.require_subcommand(1);

  std::string config_file, out, dataset, policy, ts_sweep, mode;
  std::uint64_t seed = 0;
  std::int64_t k = 0;
  double ts = 0.0;
  bool shrink_cone = false, naive_stationary = false;
  bool no_single_scale = false, no_multi_scale = false;
  std::vector<std::string> overrides;

  app.add_option("--config", config_file, "key=value config file, applied first")
      ->check(CLI::ExistingFile);
  app.add_option("--out", out, "output directory; stages write under <out>/<stage>/");
  app.add_option("--dataset", dataset, "dataset bundle path (precompute synthesizes one if unset)");
  auto* seed_opt = app.add_option("--seed", seed, "root seed; every stage derives its own stream");
  auto* k_opt = app.add_option("--k", k, "propagation depth of the full model");
  app.add_option("--mode", mode, "combine mode: sgc, sign, or s2gc");
  app.add_option("--policy", policy, "exit policy for infer/bench: fixed, distance, or gate");
  auto* ts_opt = app.add_option("--ts", ts, "distance exit threshold");
  app.add_option("--ts-sweep", ts_sweep, "bench threshold sweep as lo:hi:step");
  app.add_flag("--shrink-cone", shrink_cone, "recompute the supporting set as nodes exit");
  app.add_flag("--naive-stationary", naive_stationary,
               "charge the stationary pass at its dense cost instead of the factorized form");
  app.add_flag("--no-single-scale", no_single_scale, "distill: drop the depth-k teacher term");
  app.add_flag("--no-multi-scale", no_multi_scale, "distill: skip the ensemble stage");
  app.add_option("--set", overrides, "KEY=VALUE override, repeatable, applied last")
      ->allow_extra_args(false);

  for (const char* name : {"precompute", "train-teacher", "distill", "train-gates", "infer",
                           "bench", "verify"}) {
    app.add_subcommand(name)->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);
  const std::string stage = app.get_subcommands().front()->get_name();

  nai_config* cfg = nai_config_create();
  if (!cfg) {
    std::fprintf(stderr, "error: out of memory\n");
    return 2;
  }

  int rc = NAI_OK;
  if (!config_file.empty()) {
    rc = nai_config_load_file(cfg, config_file.c_str());
    if (rc != NAI_OK) std::fprintf(stderr, "error: %s\n", nai_last_error());
  }

  std::vector<std::pair<std::string, std::string>> kv;
  if (!out.empty()) kv.emplace_back("out", out);
  if (!dataset.empty()) kv.emplace_back("dataset", dataset);
  if (seed_opt->count()) kv.emplace_back("seed", std::to_string(seed));
  if (k_opt->count()) kv.emplace_back("k", std::to_string(k));
  if (!mode.empty()) kv.emplace_back("mode", mode);
  if (!policy.empty()) kv.emplace_back("policy", policy);
  if (ts_opt->count()) kv.emplace_back("ts", std::to_string(ts));
  if (!ts_sweep.empty()) kv.emplace_back("ts_sweep", ts_sweep);
  if (shrink_cone) kv.emplace_back("shrink_cone", "1");
  if (naive_stationary) kv.emplace_back("stationary", "naive");
  if (no_single_scale) kv.emplace_back("single_scale", "0");
  if (no_multi_scale) kv.emplace_back("multi_scale", "0");
  for (const std::string& s : overrides) {
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects KEY=VALUE, got '%s'\n", s.c_str());
      rc = NAI_ERR_INVALID_ARGUMENT;
      break;
    }
    kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [key, value] : kv) {
    if (rc != NAI_OK) break;
    rc = apply(cfg, key, value);
  }

  if (rc == NAI_OK) {
    rc = nai_run(cfg, stage.c_str());
    if (rc < 0) std::fprintf(stderr, "error: %s\n", nai_last_error());
  }

  nai_config_free(cfg);
  if (rc == NAI_OK) return 0;
  return rc == NAI_STAGE_FAILED ? 1 : 2;
}
