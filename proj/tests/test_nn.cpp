#include <doctest.h>

#include <cmath>

#include "nai/nn.hpp"
#include "util.hpp"

using namespace nai;

TEST_CASE("softmax_t basics") {
  double z2[2] = {0.0, 0.0};
  double out[2];
  softmax_t(z2, 2, 1.0, out);
  CHECK(out[0] == doctest::Approx(0.5));
  CHECK(out[1] == doctest::Approx(0.5));

  double z[2] = {1.0, 0.0};
  softmax_t(z, 2, 1.0, out);
  CHECK(out[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(out[1] == doctest::Approx(0.2689).epsilon(1e-4));

  softmax_t(z, 2, 1e6, out);
  CHECK(std::fabs(out[0] - 0.5) < 1e-6);

  // shift invariance and normalization
  double a[3] = {0.3, -2.0, 1.7};
  double b[3] = {0.3 + 11.0, -2.0 + 11.0, 1.7 + 11.0};
  double pa[3], pb[3];
  softmax_t(a, 3, 1.3, pa);
  softmax_t(b, 3, 1.3, pb);
  double sum = 0.0;
  for (int i = 0; i < 3; ++i) {
    CHECK(pa[i] == doctest::Approx(pb[i]).epsilon(1e-12));
    sum += pa[i];
  }
  CHECK(std::fabs(sum - 1.0) < 1e-12);
}

TEST_CASE("cross_entropy basics") {
  std::vector<double> uniform(4, 0.25);
  std::vector<double> onehot4 = {0, 0, 1, 0};
  CHECK(cross_entropy(uniform, onehot4) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  std::vector<double> exact = {0, 1, 0};
  CHECK(cross_entropy(exact, exact) == doctest::Approx(0.0));

  std::vector<double> p = {0.7311, 0.2689};
  std::vector<double> q = {1.0, 0.0};
  CHECK(cross_entropy(p, q) == doctest::Approx(0.3133).epsilon(1e-3));
}

TEST_CASE("gumbel_softmax saturation, limits, inference") {
  Rng rng(31);
  // A 500-point logit gap cannot be overcome by Gumbel noise in practice.
  std::vector<double> gap = {1.3 - 500.0, 1.3};
  double out[2];
  for (int i = 0; i < 200; ++i) {
    gumbel_softmax(gap, 1.0, rng, true, out);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 1.0);
  }

  // tau -> 0 sharpens the relaxed sample into a one-hot.
  std::vector<double> logits = {0.4, 0.1};
  gumbel_softmax(logits, 1e-6, rng, false, out);
  CHECK((out[0] == doctest::Approx(1.0) || out[1] == doctest::Approx(1.0)));

  // inference rule: plain argmax, no noise
  std::vector<double> inf = {2.0, 1.0};
  gumbel_argmax(inf, out);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 0.0);

  CHECK_THROWS_AS(gumbel_softmax(logits, 0.0, rng, true, out), Error);
}

TEST_CASE("tape: forward values of a linear layer") {
  Tape t;
  Matrix x(1, 2);
  x.at(0, 0) = 1.0;
  x.at(0, 1) = 0.0;
  Matrix w(2, 1);
  w.at(0, 0) = 1.0;
  w.at(1, 0) = 0.0;
  Var logits = t.matmul(t.input(x), t.param(w));
  CHECK(t.value(logits).at(0, 0) == 1.0);

  // zero weights give zero logits
  Tape t2;
  Var z = t2.matmul(t2.input(x), t2.param(Matrix(2, 3)));
  for (double v : t2.value(z).data) CHECK(v == 0.0);
}

TEST_CASE("quadratic loss has gradient 2W exactly") {
  Rng rng(5);
  Matrix w0(3, 4);
  for (double& v : w0.data) v = rng.normal();

  Tape t;
  Var w = t.param(w0);
  Var sq = t.mul(w, w);
  // sum all entries via two matmuls with ones
  Matrix ones_left(1, 3);
  Matrix ones_right(4, 1);
  for (double& v : ones_left.data) v = 1.0;
  for (double& v : ones_right.data) v = 1.0;
  Var loss = t.matmul(t.matmul(t.input(ones_left), sq), t.input(ones_right));
  t.backward(loss);
  const Matrix& g = t.grad(w);
  for (i64 i = 0; i < w0.size(); ++i) CHECK(g.data[i] == doctest::Approx(2.0 * w0.data[i]));
}

TEST_CASE("fd_check validates a 2-layer net with CE loss") {
  Rng init(77);
  DenseParams p = make_mlp(5, std::vector<i64>{4}, 3, 0.0, init);
  Matrix x = test::random_features(8, 5, init);
  Matrix y(8, 3);
  for (i64 i = 0; i < 8; ++i) y.at(i, init.below(3)) = 1.0;

  auto run = [&](std::vector<Matrix>* grads) {
    Tape t;
    MlpVars pv = lift_params(t, p);
    Var probs = t.softmax_rows(forward_on_tape(t, pv, 0.0, t.input(x), false, nullptr), 1.0);
    Var loss = t.cross_entropy_mean(probs, t.input(y));
    if (grads) {
      t.backward(loss);
      *grads = collect_grads(t, pv);
    }
    return t.value(loss).at(0, 0);
  };

  std::vector<Matrix*> params = p.param_ptrs();
  CHECK(fd_check(params, run) < 1e-4);
}

TEST_CASE("fd_check covers every tape op") {
  // A deliberately contrived loss touching concat, slicing, row selection,
  // scaling, sigmoid, straight-through-free softmax paths and both CE sides.
  Rng init(123);
  Matrix w0(4, 2);
  for (double& v : w0.data) v = init.normal() * 0.5;
  Matrix s0(3, 1);
  for (double& v : s0.data) v = init.normal() * 0.5;
  Matrix x = test::random_features(6, 2, init);
  Matrix y(6, 3);
  for (i64 i = 0; i < 6; ++i) y.at(i, init.below(3)) = 1.0;

  auto run = [&](std::vector<Matrix>* grads) {
    Tape t;
    Var w = t.param(w0);
    Var s = t.param(s0);
    Var xin = t.input(x);
    Var both = t.concat_cols(std::vector<Var>{xin, xin});  // 6 x 4
    Var h = t.sigmoid(t.matmul(both, w));                  // 6 x 2
    Var wide = t.concat_cols(std::vector<Var>{h, t.slice_col(h, 0)});  // 6 x 3
    Var scaled = t.scale_rows(wide, t.sigmoid(t.matmul(wide, s)));     // 6 x 3
    Var probs = t.softmax_rows(t.add_const(t.scale(scaled, 1.7), 0.1), 1.3);
    Var taken = t.take_rows(probs, {0, 2, 4, 5, 1, 3});
    Var l1 = t.cross_entropy_mean(taken, t.input(y));
    Var l2 = t.cross_entropy_mean(t.softmax_rows(wide, 2.0), probs);  // grads into target too
    Var loss = t.add_weighted(std::vector<Var>{l1, l2}, std::vector<double>{0.7, 0.3});
    if (grads) {
      t.backward(loss);
      grads->clear();
      grads->push_back(t.grad(w));
      grads->push_back(t.grad(s));
    }
    return t.value(loss).at(0, 0);
  };

  std::vector<Matrix*> params = {&w0, &s0};
  CHECK(fd_check(params, run) < 1e-4);
}

TEST_CASE("relu and dropout behave on the tape") {
  Tape t;
  Matrix x(2, 2);
  x.at(0, 0) = -1.0;
  x.at(0, 1) = 2.0;
  x.at(1, 0) = 0.0;
  x.at(1, 1) = -3.0;
  Var r = t.relu(t.input(x));
  CHECK(t.value(r).at(0, 0) == 0.0);
  CHECK(t.value(r).at(0, 1) == 2.0);
  CHECK(t.value(r).at(1, 1) == 0.0);

  // dropout at rate 0 is the identity node
  Rng rng(1);
  Var d0 = t.dropout(r, 0.0, rng);
  CHECK(bit_equal(t.value(d0), t.value(r)));

  // inverted dropout preserves scale in expectation
  Rng rng2(2);
  Tape t2;
  Matrix big(1, 10000);
  for (double& v : big.data) v = 1.0;
  Var d = t2.dropout(t2.input(big), 0.3, rng2);
  double mean = 0.0;
  for (double v : t2.value(d).data) mean += v;
  mean /= 10000.0;
  CHECK(std::fabs(mean - 1.0) < 0.05);
}

TEST_CASE("straight-through hard mask forwards one-hot and passes gradients") {
  Rng init(9);
  Matrix l0(3, 2);
  for (double& v : l0.data) v = init.normal();

  Tape t;
  Var logits = t.param(l0);
  Var soft = t.softmax_rows(logits, 1.0);
  Var hard = t.straight_through_hard(soft);
  const Matrix& hv = t.value(hard);
  for (i64 i = 0; i < 3; ++i) {
    CHECK(hv.at(i, 0) + hv.at(i, 1) == 1.0);
    CHECK((hv.at(i, 0) == 0.0 || hv.at(i, 0) == 1.0));
    CHECK(hv.at(i, argmax_index(t.value(soft).row(i), 2)) == 1.0);
  }
  Matrix target(3, 2);
  for (i64 i = 0; i < 3; ++i) target.at(i, 0) = 1.0;
  Var loss = t.cross_entropy_mean(t.softmax_rows(hard, 1.0), t.input(target));
  t.backward(loss);
  // gradient reached the logits through the straight-through path
  double total = 0.0;
  for (double v : t.grad(logits).data) total += std::fabs(v);
  CHECK(total > 0.0);
}

TEST_CASE("adam with lr 0 leaves parameters untouched") {
  Rng rng(4);
  Matrix w = test::random_features(3, 3, rng);
  Matrix w_copy = w;
  Matrix g = test::random_features(3, 3, rng);
  std::vector<Matrix*> params = {&w};
  AdamState st;
  st.init(params);
  adam_step(params, std::vector<Matrix>{g}, st, 0.0, 0.0);
  CHECK(bit_equal(w, w_copy));
}

TEST_CASE("adam decreases a quadratic") {
  Matrix w(2, 2);
  w.at(0, 0) = 3.0;
  w.at(1, 1) = -2.0;
  std::vector<Matrix*> params = {&w};
  AdamState st;
  st.init(params);
  for (int it = 0; it < 400; ++it) {
    Matrix g = w;
    for (double& v : g.data) v *= 2.0;
    adam_step(params, std::vector<Matrix>{g}, st, 0.05, 0.0);
  }
  for (double v : w.data) CHECK(std::fabs(v) < 1e-2);
}

TEST_CASE("adam aborts on non-finite gradients") {
  Matrix w(1, 1);
  std::vector<Matrix*> params = {&w};
  AdamState st;
  st.init(params);
  Matrix g(1, 1);
  g.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adam_step(params, std::vector<Matrix>{g}, st, 0.1, 0.0), Error);
}

TEST_CASE("forward and forward_on_tape agree in eval mode") {
  Rng init(55);
  DenseParams p = make_mlp(6, std::vector<i64>{5, 4}, 3, 0.4, init);
  Matrix x = test::random_features(7, 6, init);
  Matrix plain = forward(p, x, false, nullptr);

  Tape t;
  MlpVars pv = lift_params(t, p);
  Var logits = forward_on_tape(t, pv, p.dropout, t.input(x), false, nullptr);
  CHECK(bit_equal(plain, t.value(logits)));

  // identity single layer passes features through
  DenseParams id;
  Matrix eye(3, 3);
  for (i64 i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  id.weights.push_back(eye);
  id.biases.emplace_back(1, 3);
  Matrix xi = test::random_features(4, 3, init);
  CHECK(bit_equal(forward(id, xi, false, nullptr), xi));
}

TEST_CASE("training is deterministic per seed") {
  auto train_once = [](std::uint64_t seed) {
    Rng init(seed);
    DenseParams p = make_mlp(4, std::vector<i64>{3}, 2, 0.2, init);
    Matrix x = test::random_features(10, 4, init);
    Matrix y(10, 2);
    for (i64 i = 0; i < 10; ++i) y.at(i, init.below(2)) = 1.0;
    std::vector<Matrix*> params = p.param_ptrs();
    AdamState st;
    st.init(params);
    Rng drop(seed + 1);
    for (int epoch = 0; epoch < 20; ++epoch) {
      Tape t;
      MlpVars pv = lift_params(t, p);
      Var probs = t.softmax_rows(forward_on_tape(t, pv, p.dropout, t.input(x), true, &drop), 1.0);
      Var loss = t.cross_entropy_mean(probs, t.input(y));
      t.backward(loss);
      std::vector<Matrix> grads = collect_grads(t, pv);
      adam_step(params, grads, st, 0.01, 1e-4);
    }
    return p;
  };
  DenseParams a = train_once(99);
  DenseParams b = train_once(99);
  REQUIRE(a.weights.size() == b.weights.size());
  for (std::size_t i = 0; i < a.weights.size(); ++i) {
    CHECK(bit_equal(a.weights[i], b.weights[i]));
    CHECK(bit_equal(a.biases[i], b.biases[i]));
  }
}
