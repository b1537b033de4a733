#include "nai/checkpoint.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>

namespace nai {

namespace {

constexpr char kMagic[4] = {'N', 'A', 'I', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kKindClassifiers = 1;
constexpr std::uint32_t kKindGates = 2;
constexpr std::uint32_t kKindDepthCache = 3;

// Guards resize amounts read from the file so a corrupt header fails cleanly
// instead of attempting a huge allocation.
constexpr i64 kDimLimit = i64{1} << 32;

void write_raw(std::ofstream& out, const void* p, std::size_t bytes) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(bytes));
}

void read_raw(std::ifstream& in, void* p, std::size_t bytes) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(bytes));
  require(static_cast<std::size_t>(in.gcount()) == bytes, Errc::format,
          "checkpoint: truncated file");
}

void write_i64(std::ofstream& out, i64 v) { write_raw(out, &v, sizeof v); }

i64 read_i64(std::ifstream& in) {
  i64 v = 0;
  read_raw(in, &v, sizeof v);
  return v;
}

i64 read_count(std::ifstream& in, const char* what) {
  const i64 v = read_i64(in);
  require(v >= 0 && v < kDimLimit, Errc::format, std::string("checkpoint: bad ") + what);
  return v;
}

void write_double(std::ofstream& out, double v) { write_raw(out, &v, sizeof v); }

double read_double(std::ifstream& in) {
  double v = 0.0;
  read_raw(in, &v, sizeof v);
  return v;
}

void write_matrix(std::ofstream& out, const Matrix& m) {
  write_i64(out, m.rows);
  write_i64(out, m.cols);
  write_raw(out, m.data.data(), m.data.size() * sizeof(double));
}

Matrix read_matrix(std::ifstream& in) {
  const i64 rows = read_count(in, "matrix rows");
  const i64 cols = read_count(in, "matrix cols");
  Matrix m(rows, cols);
  read_raw(in, m.data.data(), m.data.size() * sizeof(double));
  return m;
}

std::ofstream open_save(const std::string& path, std::uint32_t kind) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), Errc::io, "checkpoint: cannot open for writing: " + path);
  write_raw(out, kMagic, sizeof kMagic);
  write_raw(out, &kVersion, sizeof kVersion);
  write_raw(out, &kind, sizeof kind);
  return out;
}

std::ifstream open_load(const std::string& path, std::uint32_t kind) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "checkpoint: cannot open: " + path);
  char magic[4];
  read_raw(in, magic, sizeof magic);
  require(std::equal(magic, magic + 4, kMagic), Errc::format, "checkpoint: bad magic");
  std::uint32_t version = 0, got = 0;
  read_raw(in, &version, sizeof version);
  require(version == kVersion, Errc::format, "checkpoint: unsupported version");
  read_raw(in, &got, sizeof got);
  require(got == kind, Errc::format, "checkpoint: wrong model kind");
  return in;
}

void finish_save(std::ofstream& out, const std::string& path) {
  out.flush();
  require(out.good(), Errc::io, "checkpoint: write failed: " + path);
}

}  // namespace

void save_classifiers(const std::string& path, const ClassifierStack& stack) {
  std::ofstream out = open_save(path, kKindClassifiers);
  write_i64(out, static_cast<i64>(stack.mode));
  write_i64(out, stack.k);
  write_i64(out, stack.f);
  write_i64(out, stack.c);
  write_i64(out, stack.ensemble_r);
  for (const DenseParams& net : stack.nets) {
    write_i64(out, net.layer_count());
    write_double(out, net.dropout);
    for (i64 i = 0; i < net.layer_count(); ++i) {
      write_matrix(out, net.weights[static_cast<std::size_t>(i)]);
      write_matrix(out, net.biases[static_cast<std::size_t>(i)]);
    }
  }
  write_raw(out, stack.trained.data(), stack.trained.size());
  write_i64(out, static_cast<i64>(stack.s_vectors.size()));
  for (const std::vector<double>& s : stack.s_vectors) {
    write_i64(out, static_cast<i64>(s.size()));
    write_raw(out, s.data(), s.size() * sizeof(double));
  }
  finish_save(out, path);
}

ClassifierStack load_classifiers(const std::string& path) {
  std::ifstream in = open_load(path, kKindClassifiers);
  ClassifierStack stack;
  const i64 mode = read_i64(in);
  require(mode >= 0 && mode <= 2, Errc::format, "checkpoint: bad combine mode");
  stack.mode = static_cast<CombineMode>(mode);
  stack.k = read_count(in, "depth budget");
  stack.f = read_count(in, "feature width");
  stack.c = read_count(in, "class count");
  stack.ensemble_r = read_count(in, "ensemble size");
  stack.nets.resize(static_cast<std::size_t>(stack.k));
  for (DenseParams& net : stack.nets) {
    const i64 layers = read_count(in, "layer count");
    net.dropout = read_double(in);
    for (i64 i = 0; i < layers; ++i) {
      net.weights.push_back(read_matrix(in));
      net.biases.push_back(read_matrix(in));
    }
  }
  stack.trained.resize(static_cast<std::size_t>(stack.k));
  read_raw(in, stack.trained.data(), stack.trained.size());
  const i64 s_count = read_count(in, "attention vector count");
  stack.s_vectors.resize(static_cast<std::size_t>(s_count));
  for (std::vector<double>& s : stack.s_vectors) {
    s.resize(static_cast<std::size_t>(read_count(in, "attention vector length")));
    read_raw(in, s.data(), s.size() * sizeof(double));
  }
  return stack;
}

void save_gates(const std::string& path, const GateStack& gates) {
  std::ofstream out = open_save(path, kKindGates);
  write_i64(out, gates.k);
  write_i64(out, gates.f);
  write_double(out, gates.mu);
  write_double(out, gates.phi);
  write_i64(out, gates.trained ? 1 : 0);
  for (const Matrix& w : gates.w) write_matrix(out, w);
  finish_save(out, path);
}

GateStack load_gates(const std::string& path) {
  std::ifstream in = open_load(path, kKindGates);
  GateStack gates;
  gates.k = read_count(in, "depth budget");
  gates.f = read_count(in, "feature width");
  gates.mu = read_double(in);
  gates.phi = read_double(in);
  gates.trained = read_i64(in) != 0;
  const i64 count = gates.k > 0 ? gates.k - 1 : 0;
  for (i64 i = 0; i < count; ++i) gates.w.push_back(read_matrix(in));
  return gates;
}

void save_depth_cache(const std::string& path, const DepthCache& cache) {
  std::ofstream out = open_save(path, kKindDepthCache);
  write_double(out, cache.gamma);
  write_i64(out, static_cast<i64>(cache.mode));
  write_i64(out, cache.s2gc_divisor_plus_one ? 1 : 0);
  write_i64(out, cache.k);
  for (const Matrix& m : cache.stack) write_matrix(out, m);
  write_matrix(out, cache.x_inf);
  for (const std::vector<i64>* ids : {&cache.view_nodes, &cache.v_l_local, &cache.v_u_local}) {
    write_i64(out, static_cast<i64>(ids->size()));
    write_raw(out, ids->data(), ids->size() * sizeof(i64));
  }
  finish_save(out, path);
}

DepthCache load_depth_cache(const std::string& path) {
  std::ifstream in = open_load(path, kKindDepthCache);
  DepthCache cache;
  cache.gamma = read_double(in);
  const i64 mode = read_i64(in);
  require(mode >= 0 && mode <= 2, Errc::format, "checkpoint: bad combine mode");
  cache.mode = static_cast<CombineMode>(mode);
  cache.s2gc_divisor_plus_one = read_i64(in) != 0;
  cache.k = read_count(in, "depth budget");
  for (i64 l = 0; l <= cache.k; ++l) cache.stack.push_back(read_matrix(in));
  cache.x_inf = read_matrix(in);
  for (std::vector<i64>* ids : {&cache.view_nodes, &cache.v_l_local, &cache.v_u_local}) {
    ids->resize(static_cast<std::size_t>(read_count(in, "id list length")));
    read_raw(in, ids->data(), ids->size() * sizeof(i64));
  }
  return cache;
}

}  // namespace nai
