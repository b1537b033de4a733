#include "nai/verify.hpp"

#include <doctest.h>

#include "util.hpp"

using namespace nai;

TEST_CASE("oracle suites pass on fresh seeds") {
  // Scaled-down parametrizations; the acceptance harness runs the full sizes.
  for (const CheckResult& r : verify_stationary(123, 6)) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
  for (const CheckResult& r : verify_gradients(123, 1)) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
  // The union-property result is informational (the hop term has known
  // counterexamples); only the calculator check gates.
  std::vector<CheckResult> bound = verify_depth_bound(123, 2);
  REQUIRE(bound.size() == 2);
  CHECK(bound[0].required);
  INFO(bound[0].name, ": ", bound[0].detail);
  CHECK(bound[0].pass);
  CHECK_FALSE(bound[1].required);
}

TEST_CASE("ledger recount agrees with the engine and flags tampering") {
  std::vector<CheckResult> results = verify_mac_accounting(7);
  REQUIRE(results.size() == 2);
  for (const CheckResult& r : results) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
  CHECK(all_passed(results));

  // recount_ledger is an independent computation: feeding it a report whose
  // exit depths were doctored must break the match.
  Rng rng(77);
  Graph g = test::connected_er_graph(30, 0.12, rng);
  Matrix x = test::random_features(30, 4, rng);
  ModelBundle bundle;
  bundle.stack = make_stack(CombineMode::SGC, 3, 4, 2, 0, 0.0, rng);
  for (i64 d = 1; d <= 3; ++d) bundle.stack.mark_trained(d);
  NormalizedAdjacency adj = normalize(g, bundle.gamma);
  std::vector<i64> batch{1, 4, 9, 16, 25};
  InferencePolicy policy;
  policy.mode = PolicyMode::Distance;
  policy.ts = 0.6;
  policy.t_min = 1;
  policy.t_max = 3;
  PredictionReport rep = infer_batch(bundle, g, adj, x, batch, policy);
  CHECK(recount_ledger(g, adj, bundle.stack, rep, policy).macs == rep.ledger.macs);

  PredictionReport doctored = rep;
  doctored.exit_depth[0] = doctored.exit_depth[0] == 3 ? 1 : 3;
  CHECK(recount_ledger(g, adj, bundle.stack, doctored, policy).macs != rep.ledger.macs);
}

TEST_CASE("all_passed reports any required failure") {
  std::vector<CheckResult> rs{{"a", true, ""}, {"b", false, "boom"}};
  CHECK_FALSE(all_passed(rs));
  rs[1].pass = true;
  CHECK(all_passed(rs));
  rs.push_back({"c", false, "empirical", false});
  CHECK(all_passed(rs));
}
