#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "nai/dataset.hpp"
#include "util.hpp"

using namespace nai;

namespace {

std::string tmp_path(const char* name) { return std::string("/tmp/nai-test-") + name; }

DatasetBundle small_bundle() {
  DatasetBundle b = synth_sbm(std::vector<i64>{20, 20}, 0.3, 0.05, 4, 1.0, 99);
  return b;
}

}  // namespace

TEST_CASE("bundle round trip is exact") {
  DatasetBundle b = small_bundle();
  const std::string path = tmp_path("roundtrip.naib");
  save_bundle(b, path);
  DatasetBundle r = load_bundle(path);
  CHECK(r.graph.n == b.graph.n);
  CHECK(r.graph.m == b.graph.m);
  CHECK(r.graph.row_offsets == b.graph.row_offsets);
  CHECK(r.graph.col_indices == b.graph.col_indices);
  CHECK(r.graph.degrees == b.graph.degrees);
  CHECK(bit_equal(r.features, b.features));
  CHECK(r.labels == b.labels);
  CHECK(r.c == b.c);
  CHECK(r.v_l == b.v_l);
  CHECK(r.v_u == b.v_u);
  CHECK(r.v_test == b.v_test);
  std::remove(path.c_str());
}

TEST_CASE("bad files are rejected with format errors") {
  DatasetBundle b = small_bundle();
  const std::string path = tmp_path("corrupt.naib");
  save_bundle(b, path);

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_WITH_AS(load_bundle(path), doctest::Contains("magic"), Error);

  save_bundle(b, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint32_t bad = 77;
    f.write(reinterpret_cast<const char*>(&bad), sizeof(bad));
  }
  CHECK_THROWS_WITH_AS(load_bundle(path), doctest::Contains("version"), Error);

  save_bundle(b, path);
  {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
  }
  CHECK_THROWS_WITH_AS(load_bundle(path), doctest::Contains("truncated"), Error);

  CHECK_THROWS_AS(load_bundle(tmp_path("missing.naib")), Error);
  std::remove(path.c_str());
}

TEST_CASE("split overlap fails validation") {
  DatasetBundle b = small_bundle();
  b.v_u.push_back(b.v_l.front());
  CHECK_THROWS_WITH_AS(b.validate(), doctest::Contains("overlapping"), Error);
  CHECK_THROWS_AS(save_bundle(b, tmp_path("never.naib")), Error);
}

TEST_CASE("labels must cover labeled and test splits") {
  DatasetBundle b = small_bundle();
  b.labels[static_cast<std::size_t>(b.v_test.front())] = -1;
  CHECK_THROWS_WITH_AS(b.validate(), doctest::Contains("missing label"), Error);
}

TEST_CASE("train view drops test nodes and their edges") {
  // Path 0-1-2 with node 2 held out.
  DatasetBundle b;
  std::vector<std::pair<NodeId, NodeId>> edges{{0, 1}, {1, 2}};
  b.graph = build_graph(edges, 3);
  b.features = Matrix(3, 2);
  for (i64 i = 0; i < 3; ++i) b.features.at(i, 0) = static_cast<double>(i) + 1.0;
  b.labels = {0, 1, 0};
  b.c = 2;
  b.v_l = {0, 1};
  b.v_test = {2};

  TrainView view = inductive_train_view(b);
  CHECK(view.graph.n == 2);
  CHECK(view.graph.m == 1);
  CHECK(view.global_of == std::vector<i64>{0, 1});
  CHECK(view.local_of == std::vector<i64>{0, 1, -1});
  CHECK(view.labels == std::vector<i64>{0, 1});
  CHECK(view.features.at(1, 0) == 2.0);
  CHECK(view.v_l_local == std::vector<i64>{0, 1});
  CHECK(view.graph.m < b.graph.m);
}

TEST_CASE("train view with everything in train is the identity") {
  DatasetBundle b = small_bundle();
  b.v_u.insert(b.v_u.end(), b.v_test.begin(), b.v_test.end());
  b.v_test.clear();
  TrainView view = inductive_train_view(b);
  CHECK(view.graph.n == b.graph.n);
  CHECK(view.graph.m == b.graph.m);
  CHECK(view.graph.row_offsets == b.graph.row_offsets);
  CHECK(view.graph.col_indices == b.graph.col_indices);
  CHECK(bit_equal(view.features, b.features));
}

TEST_CASE("train view leaks no test edges") {
  DatasetBundle b = small_bundle();
  TrainView view = inductive_train_view(b);
  // Every surviving edge joins two train-view nodes by construction; check
  // the endpoint mapping round-trips into the train set.
  for (i64 u = 0; u < view.graph.n; ++u)
    for (i64 v : view.graph.neighbors(u)) {
      CHECK(view.global_of[static_cast<std::size_t>(v)] >= 0);
      CHECK(view.local_of[static_cast<std::size_t>(view.global_of[static_cast<std::size_t>(v)])] == v);
    }
  // And the view's edge count matches a direct count over train pairs.
  i64 expect = 0;
  for (i64 u = 0; u < b.graph.n; ++u) {
    if (view.local_of[static_cast<std::size_t>(u)] < 0) continue;
    for (i64 v : b.graph.neighbors(u))
      if (u < v && view.local_of[static_cast<std::size_t>(v)] >= 0) ++expect;
  }
  CHECK(view.graph.m == expect);
}

TEST_CASE("two blocks at p_in 1 and p_out 0 are cliques") {
  DatasetBundle b = synth_sbm(std::vector<i64>{5, 4}, 1.0, 0.0, 2, 1.0, 7);
  CHECK(b.graph.n == 9);
  CHECK(b.graph.m == 10 + 6);
  for (i64 i = 0; i < 5; ++i) CHECK(b.graph.degree(i) == 4);
  for (i64 i = 5; i < 9; ++i) CHECK(b.graph.degree(i) == 3);
  for (i64 i = 0; i < 9; ++i) CHECK(b.labels[static_cast<std::size_t>(i)] == (i < 5 ? 0 : 1));
}

TEST_CASE("sbm generation is deterministic per seed") {
  const std::vector<i64> sizes{15, 15};
  DatasetBundle a = synth_sbm(sizes, 0.3, 0.05, 4, 0.5, 11);
  DatasetBundle b = synth_sbm(sizes, 0.3, 0.05, 4, 0.5, 11);
  DatasetBundle c = synth_sbm(sizes, 0.3, 0.05, 4, 0.5, 12);
  CHECK(a.graph.col_indices == b.graph.col_indices);
  CHECK(bit_equal(a.features, b.features));
  CHECK(a.v_l == b.v_l);
  CHECK((a.graph.col_indices != c.graph.col_indices || !bit_equal(a.features, c.features)));
}

TEST_CASE("class signal controls between-class separation") {
  const std::vector<i64> sizes{100, 100};
  auto separation = [&](double signal) {
    DatasetBundle b = synth_sbm(sizes, 0.0, 0.0, 8, signal, 5);
    std::vector<double> m0(8), m1(8);
    for (i64 i = 0; i < 200; ++i)
      for (i64 j = 0; j < 8; ++j)
        (i < 100 ? m0 : m1)[static_cast<std::size_t>(j)] += b.features.at(i, j) / 100.0;
    double d = 0.0;
    for (i64 j = 0; j < 8; ++j)
      d += (m0[static_cast<std::size_t>(j)] - m1[static_cast<std::size_t>(j)]) *
           (m0[static_cast<std::size_t>(j)] - m1[static_cast<std::size_t>(j)]);
    return std::sqrt(d);
  };
  CHECK(separation(0.0) < separation(4.0) / 4.0);
}

TEST_CASE("sbm splits are stratified and sized by the fractions") {
  DatasetBundle b = synth_sbm(std::vector<i64>{50, 50}, 0.1, 0.01, 4, 1.0, 13, 0.4, 0.3);
  CHECK(b.v_l.size() == 40);
  CHECK(b.v_u.size() == 30);
  CHECK(b.v_test.size() == 30);
  i64 l_in_first = 0;
  for (i64 id : b.v_l)
    if (id < 50) ++l_in_first;
  CHECK(l_in_first == 20);
  CHECK_THROWS_AS(synth_sbm(std::vector<i64>{0, 5}, 0.1, 0.01, 4, 1.0, 13), Error);
  CHECK_THROWS_AS(synth_sbm(std::vector<i64>{5, 5}, 1.5, 0.01, 4, 1.0, 13), Error);
}

TEST_CASE("edge list text import") {
  const std::string path = tmp_path("edges.txt");
  {
    std::ofstream out(path);
    out << "# a comment\n0 1\n1 2\n\n2 0\n";
  }
  Graph g = load_edge_list(path);
  CHECK(g.n == 3);
  CHECK(g.m == 3);
  Graph padded = load_edge_list(path, 5);
  CHECK(padded.n == 5);
  CHECK(padded.degree(4) == 0);
  {
    std::ofstream out(path);
    out << "0 not-a-number\n";
  }
  CHECK_THROWS_WITH_AS(load_edge_list(path), doctest::Contains("line 1"), Error);
  std::remove(path.c_str());
}

TEST_CASE("id list import") {
  const std::string path = tmp_path("ids.txt");
  {
    std::ofstream out(path);
    out << "# split\n3\n1\n4\n";
  }
  CHECK(load_id_list(path) == std::vector<i64>{3, 1, 4});
  std::remove(path.c_str());
}

TEST_CASE("one hot labels") {
  const std::vector<i64> labels{0, 2, -1, 1};
  Matrix y = onehot_labels(labels, 3);
  CHECK(y.at(0, 0) == 1.0);
  CHECK(y.at(1, 2) == 1.0);
  CHECK(y.at(2, 0) == 0.0);
  CHECK(y.at(2, 1) == 0.0);
  CHECK(y.at(2, 2) == 0.0);
  CHECK(y.at(3, 1) == 1.0);
  const std::vector<i64> bad{3};
  CHECK_THROWS_AS(onehot_labels(bad, 3), Error);
}
