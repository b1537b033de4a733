#include "nai/dataset.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace nai {

namespace {

constexpr char kMagic[4] = {'N', 'A', 'I', 'B'};
constexpr std::uint32_t kVersion = 1;

void write_raw(std::ofstream& out, const void* p, std::size_t bytes) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(bytes));
}

void read_raw(std::ifstream& in, void* p, std::size_t bytes) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(bytes));
  require(static_cast<std::size_t>(in.gcount()) == bytes, Errc::format,
          "load_bundle: truncated file");
}

void write_i64s(std::ofstream& out, std::span<const i64> v) {
  write_raw(out, v.data(), v.size() * sizeof(i64));
}

void read_i64s(std::ifstream& in, std::vector<i64>& v, std::size_t count) {
  v.resize(count);
  read_raw(in, v.data(), count * sizeof(i64));
}

void check_disjoint(std::span<const i64> a, std::span<const i64> b, const char* what) {
  std::unordered_set<i64> seen(a.begin(), a.end());
  for (i64 id : b)
    require(!seen.count(id), Errc::invalid_argument, std::string("bundle: overlapping splits: ") + what);
}

}  // namespace

void DatasetBundle::validate() const {
  require(features.rows == graph.n, Errc::invalid_argument, "bundle: feature rows != n");
  require(static_cast<i64>(labels.size()) == graph.n, Errc::invalid_argument,
          "bundle: label count != n");
  require(c >= 1, Errc::invalid_argument, "bundle: class count must be >= 1");
  for (i64 v : labels)
    require(v >= -1 && v < c, Errc::invalid_argument, "bundle: label out of range");
  auto check_ids = [&](std::span<const i64> ids, const char* what, bool need_label) {
    for (i64 id : ids) {
      require(id >= 0 && id < graph.n, Errc::invalid_argument,
              std::string("bundle: split id out of range: ") + what);
      if (need_label)
        require(labels[static_cast<std::size_t>(id)] >= 0, Errc::invalid_argument,
                std::string("bundle: missing label in ") + what);
    }
  };
  check_ids(v_l, "v_l", true);
  check_ids(v_u, "v_u", false);
  check_ids(v_test, "v_test", true);
  check_disjoint(v_l, v_u, "v_l/v_u");
  check_disjoint(v_l, v_test, "v_l/v_test");
  check_disjoint(v_u, v_test, "v_u/v_test");
}

void save_bundle(const DatasetBundle& bundle, const std::string& path) {
  bundle.validate();
  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::io, "save_bundle: cannot open " + path);
  write_raw(out, kMagic, 4);
  write_raw(out, &kVersion, sizeof(kVersion));
  const i64 header[7] = {bundle.graph.n,
                         bundle.graph.m,
                         bundle.f(),
                         bundle.c,
                         static_cast<i64>(bundle.v_l.size()),
                         static_cast<i64>(bundle.v_u.size()),
                         static_cast<i64>(bundle.v_test.size())};
  write_raw(out, header, sizeof(header));
  write_i64s(out, bundle.graph.row_offsets);
  write_i64s(out, bundle.graph.col_indices);
  write_raw(out, bundle.features.data.data(), bundle.features.data.size() * sizeof(double));
  write_i64s(out, bundle.labels);
  write_i64s(out, bundle.v_l);
  write_i64s(out, bundle.v_u);
  write_i64s(out, bundle.v_test);
  require(out.good(), Errc::io, "save_bundle: write failed for " + path);
}

DatasetBundle load_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "load_bundle: cannot open " + path);
  char magic[4];
  read_raw(in, magic, 4);
  require(std::equal(magic, magic + 4, kMagic), Errc::format, "load_bundle: bad magic");
  std::uint32_t version = 0;
  read_raw(in, &version, sizeof(version));
  require(version == kVersion, Errc::format,
          "load_bundle: unsupported version " + std::to_string(version));
  i64 header[7];
  read_raw(in, header, sizeof(header));
  const i64 n = header[0], m = header[1], f = header[2];
  require(n >= 1 && m >= 0 && f >= 1, Errc::format, "load_bundle: bad header dims");

  DatasetBundle b;
  b.c = header[3];
  read_i64s(in, b.graph.row_offsets, static_cast<std::size_t>(n) + 1);
  read_i64s(in, b.graph.col_indices, static_cast<std::size_t>(2 * m));
  b.graph.n = n;
  b.graph.m = m;
  require(b.graph.row_offsets.front() == 0 && b.graph.row_offsets.back() == 2 * m, Errc::format,
          "load_bundle: bad offsets");
  b.graph.degrees.resize(static_cast<std::size_t>(n));
  for (i64 i = 0; i < n; ++i) {
    const i64 lo = b.graph.row_offsets[static_cast<std::size_t>(i)];
    const i64 hi = b.graph.row_offsets[static_cast<std::size_t>(i) + 1];
    require(hi >= lo, Errc::format, "load_bundle: offsets not monotone");
    b.graph.degrees[static_cast<std::size_t>(i)] = hi - lo;
    for (i64 p = lo; p < hi; ++p) {
      const i64 col = b.graph.col_indices[static_cast<std::size_t>(p)];
      require(col >= 0 && col < n && col != i, Errc::format, "load_bundle: bad column");
      require(p == lo || b.graph.col_indices[static_cast<std::size_t>(p - 1)] < col, Errc::format,
              "load_bundle: columns not strictly sorted");
    }
  }
  b.features = Matrix(n, f);
  read_raw(in, b.features.data.data(), b.features.data.size() * sizeof(double));
  read_i64s(in, b.labels, static_cast<std::size_t>(n));
  read_i64s(in, b.v_l, static_cast<std::size_t>(header[4]));
  read_i64s(in, b.v_u, static_cast<std::size_t>(header[5]));
  read_i64s(in, b.v_test, static_cast<std::size_t>(header[6]));
  b.validate();
  return b;
}

TrainView inductive_train_view(const DatasetBundle& bundle) {
  bundle.validate();
  const i64 n = bundle.graph.n;
  TrainView view;
  view.local_of.assign(static_cast<std::size_t>(n), -1);
  std::vector<i64> train(bundle.v_l.begin(), bundle.v_l.end());
  train.insert(train.end(), bundle.v_u.begin(), bundle.v_u.end());
  std::sort(train.begin(), train.end());
  require(!train.empty(), Errc::invalid_argument, "train view: empty training set");
  for (std::size_t i = 0; i < train.size(); ++i)
    view.local_of[static_cast<std::size_t>(train[i])] = static_cast<i64>(i);
  view.global_of = train;

  std::vector<std::pair<NodeId, NodeId>> edges;
  for (i64 u : train) {
    const i64 lu = view.local_of[static_cast<std::size_t>(u)];
    for (i64 v : bundle.graph.neighbors(u)) {
      const i64 lv = view.local_of[static_cast<std::size_t>(v)];
      if (lv >= 0 && u < v) edges.emplace_back(lu, lv);
    }
  }
  view.graph = build_graph(edges, static_cast<i64>(train.size()));
  view.features = gather_rows(bundle.features, train);
  view.labels.reserve(train.size());
  for (i64 g : train) view.labels.push_back(bundle.labels[static_cast<std::size_t>(g)]);
  for (i64 g : bundle.v_l) view.v_l_local.push_back(view.local_of[static_cast<std::size_t>(g)]);
  for (i64 g : bundle.v_u) view.v_u_local.push_back(view.local_of[static_cast<std::size_t>(g)]);
  return view;
}

DatasetBundle synth_sbm(std::span<const i64> sizes, double p_in, double p_out, i64 f,
                        double class_signal, std::uint64_t seed, double frac_l, double frac_u) {
  require(!sizes.empty(), Errc::invalid_argument, "synth_sbm: no blocks");
  for (i64 s : sizes) require(s >= 1, Errc::invalid_argument, "synth_sbm: degenerate block size");
  require(p_in >= 0.0 && p_in <= 1.0 && p_out >= 0.0 && p_out <= 1.0, Errc::invalid_argument,
          "synth_sbm: probabilities must lie in [0,1]");
  require(f >= 1, Errc::invalid_argument, "synth_sbm: empty feature dim");
  require(frac_l >= 0.0 && frac_u >= 0.0 && frac_l + frac_u <= 1.0, Errc::invalid_argument,
          "synth_sbm: bad split fractions");

  DatasetBundle b;
  b.c = static_cast<i64>(sizes.size());
  i64 n = 0;
  for (i64 s : sizes) n += s;
  b.labels.reserve(static_cast<std::size_t>(n));
  for (i64 blk = 0; blk < b.c; ++blk)
    for (i64 j = 0; j < sizes[static_cast<std::size_t>(blk)]; ++j) b.labels.push_back(blk);

  Rng graph_rng(stage_seed(seed, "sbm-graph"));
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (i64 u = 0; u < n; ++u)
    for (i64 v = u + 1; v < n; ++v) {
      const double p = b.labels[static_cast<std::size_t>(u)] == b.labels[static_cast<std::size_t>(v)]
                           ? p_in
                           : p_out;
      if (p > 0.0 && graph_rng.uniform() < p) edges.emplace_back(u, v);
    }
  b.graph = build_graph(edges, n);

  Rng feat_rng(stage_seed(seed, "sbm-features"));
  std::vector<std::vector<double>> means;
  for (i64 blk = 0; blk < b.c; ++blk) {
    std::vector<double> dir(static_cast<std::size_t>(f));
    double norm = 0.0;
    for (double& v : dir) {
      v = feat_rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : dir) v = class_signal * v / (norm > 0.0 ? norm : 1.0);
    means.push_back(std::move(dir));
  }
  b.features = Matrix(n, f);
  for (i64 i = 0; i < n; ++i) {
    const auto& mu = means[static_cast<std::size_t>(b.labels[static_cast<std::size_t>(i)])];
    for (i64 j = 0; j < f; ++j)
      b.features.at(i, j) = mu[static_cast<std::size_t>(j)] + feat_rng.normal();
  }

  Rng split_rng(stage_seed(seed, "sbm-splits"));
  i64 base = 0;
  for (i64 blk = 0; blk < b.c; ++blk) {
    const i64 sz = sizes[static_cast<std::size_t>(blk)];
    std::vector<i64> ids(static_cast<std::size_t>(sz));
    for (i64 j = 0; j < sz; ++j) ids[static_cast<std::size_t>(j)] = base + j;
    split_rng.shuffle(ids);
    const i64 nl = static_cast<i64>(frac_l * static_cast<double>(sz));
    const i64 nu = static_cast<i64>(frac_u * static_cast<double>(sz));
    for (i64 j = 0; j < sz; ++j) {
      if (j < nl)
        b.v_l.push_back(ids[static_cast<std::size_t>(j)]);
      else if (j < nl + nu)
        b.v_u.push_back(ids[static_cast<std::size_t>(j)]);
      else
        b.v_test.push_back(ids[static_cast<std::size_t>(j)]);
    }
    base += sz;
  }
  b.validate();
  return b;
}

Graph load_edge_list(const std::string& path, i64 n_hint) {
  std::ifstream in(path);
  require(in.good(), Errc::io, "load_edge_list: cannot open " + path);
  std::vector<std::pair<NodeId, NodeId>> edges;
  i64 max_id = -1;
  std::string line;
  i64 lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream row(line);
    i64 u = 0, v = 0;
    require(static_cast<bool>(row >> u >> v), Errc::format,
            "load_edge_list: cannot parse line " + std::to_string(lineno));
    require(u >= 0 && v >= 0, Errc::format,
            "load_edge_list: negative id on line " + std::to_string(lineno));
    edges.emplace_back(u, v);
    max_id = std::max({max_id, u, v});
  }
  const i64 n = std::max(n_hint, max_id + 1);
  require(n >= 1, Errc::format, "load_edge_list: no nodes");
  return build_graph(edges, n);
}

std::vector<i64> load_id_list(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io, "load_id_list: cannot open " + path);
  std::vector<i64> out;
  std::string line;
  i64 lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream row(line);
    i64 id = 0;
    require(static_cast<bool>(row >> id), Errc::format,
            "load_id_list: cannot parse line " + std::to_string(lineno));
    out.push_back(id);
  }
  return out;
}

Matrix onehot_labels(std::span<const i64> labels, i64 c) {
  Matrix out(static_cast<i64>(labels.size()), c);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= -1 && labels[i] < c, Errc::invalid_argument, "onehot: label out of range");
    if (labels[i] >= 0) out.at(static_cast<i64>(i), labels[i]) = 1.0;
  }
  return out;
}

}  // namespace nai
