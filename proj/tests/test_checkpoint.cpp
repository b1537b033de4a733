#include "nai/checkpoint.hpp"

#include <doctest.h>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

using namespace nai;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const char* name) : path(std::string("/tmp/nai-test-") + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

bool same_params(const DenseParams& a, const DenseParams& b) {
  if (a.layer_count() != b.layer_count() || a.dropout != b.dropout) return false;
  for (std::size_t i = 0; i < a.weights.size(); ++i) {
    if (!bit_equal(a.weights[i], b.weights[i])) return false;
    if (!bit_equal(a.biases[i], b.biases[i])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("classifier checkpoints round-trip bit for bit") {
  Rng rng(1000);
  ClassifierStack stack = make_stack(CombineMode::SIGN, 4, 5, 3, 8, 0.25, rng);
  stack.mark_trained(1);
  stack.mark_trained(3);
  stack.ensemble_r = 2;
  stack.s_vectors = {{0.1, -0.2, 0.3}, {1.5, 0.0, -2.25}};

  TempFile file("clf.bin");
  save_classifiers(file.path, stack);
  ClassifierStack back = load_classifiers(file.path);

  CHECK(back.mode == stack.mode);
  CHECK(back.k == stack.k);
  CHECK(back.f == stack.f);
  CHECK(back.c == stack.c);
  CHECK(back.ensemble_r == 2);
  CHECK(back.trained == stack.trained);
  CHECK(back.s_vectors == stack.s_vectors);
  REQUIRE(back.nets.size() == stack.nets.size());
  for (i64 d = 1; d <= 4; ++d) {
    CHECK(same_params(back.net(d), stack.net(d)));
    CHECK(back.is_trained(d) == stack.is_trained(d));
  }
}

TEST_CASE("linear single-layer stacks and empty attention survive the trip") {
  Rng rng(1001);
  ClassifierStack stack = make_stack(CombineMode::SGC, 2, 3, 4, 0, 0.0, rng);
  TempFile file("clf-linear.bin");
  save_classifiers(file.path, stack);
  ClassifierStack back = load_classifiers(file.path);
  CHECK(back.s_vectors.empty());
  CHECK(back.ensemble_r == 0);
  CHECK(back.net(1).layer_count() == 1);
  CHECK(same_params(back.net(2), stack.net(2)));
  CHECK_FALSE(back.is_trained(1));
}

TEST_CASE("gate checkpoints round-trip bit for bit") {
  Rng rng(1002);
  GateStack gates = make_gates(5, 7, rng);
  gates.trained = true;
  gates.mu = 500.0;

  TempFile file("gates.bin");
  save_gates(file.path, gates);
  GateStack back = load_gates(file.path);

  CHECK(back.k == 5);
  CHECK(back.f == 7);
  CHECK(back.mu == 500.0);
  CHECK(back.phi == 1000.0);
  CHECK(back.trained);
  REQUIRE(back.gate_count() == 4);
  for (i64 d = 1; d < 5; ++d) CHECK(bit_equal(back.gate(d), gates.gate(d)));
}

TEST_CASE("loading rejects the wrong kind, bad magic, and truncation") {
  Rng rng(1003);
  ClassifierStack stack = make_stack(CombineMode::SGC, 2, 3, 2, 0, 0.0, rng);
  GateStack gates = make_gates(3, 3, rng);

  TempFile clf("kind-clf.bin");
  TempFile gat("kind-gates.bin");
  save_classifiers(clf.path, stack);
  save_gates(gat.path, gates);

  CHECK_THROWS_WITH_AS(load_gates(clf.path), doctest::Contains("wrong model kind"), Error);
  CHECK_THROWS_WITH_AS(load_classifiers(gat.path), doctest::Contains("wrong model kind"), Error);

  TempFile garbage("garbage.bin");
  {
    std::ofstream out(garbage.path, std::ios::binary);
    out << "XXXXXXXXXXXXXXXX";
  }
  CHECK_THROWS_WITH_AS(load_classifiers(garbage.path), doctest::Contains("bad magic"), Error);

  // Chop the classifier file in half.
  TempFile cut("cut.bin");
  {
    std::ifstream in(clf.path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(cut.path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_WITH_AS(load_classifiers(cut.path), doctest::Contains("truncated"), Error);

  CHECK_THROWS_AS(load_classifiers("/tmp/nai-test-does-not-exist.bin"), Error);
}

TEST_CASE("a version bump in the header is refused") {
  Rng rng(1004);
  ClassifierStack stack = make_stack(CombineMode::SGC, 1, 2, 2, 0, 0.0, rng);
  TempFile file("ver.bin");
  save_classifiers(file.path, stack);
  {
    std::fstream io(file.path, std::ios::binary | std::ios::in | std::ios::out);
    io.seekp(4);
    const std::uint32_t bogus = 9;
    io.write(reinterpret_cast<const char*>(&bogus), sizeof bogus);
  }
  CHECK_THROWS_WITH_AS(load_classifiers(file.path), doctest::Contains("version"), Error);
}
