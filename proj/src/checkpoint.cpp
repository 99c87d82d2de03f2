#include "pcfg/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "pcfg/errors.hpp"

namespace pcfg {

namespace {

constexpr char kMagic[8] = {'P', 'C', 'F', 'G', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream &out, const T &v) {
  out.write(reinterpret_cast<const char *>(&v), sizeof v);
}

void put_string(std::ostream &out, const std::string &s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_tensors(std::ostream &out, const ParameterSet &p) {
  p.visit([&](const char *name, const Eigen::MatrixXd &m) {
    put_string(out, name);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char *>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  });
}

class Reader {
 public:
  Reader(std::istream &in, std::string path) : in_(in), path_(std::move(path)) {}

  template <typename T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char *>(&v), sizeof v);
    if (!in_) fail("truncated file");
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint64_t>();
    if (n > (1ull << 32)) fail("implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) fail("truncated file");
    return s;
  }

  // Fills tensors whose shapes were set from the recorded dimensions.
  void get_tensors(ParameterSet &p) {
    p.visit([&](const char *name, Eigen::MatrixXd &m) {
      const std::string stored = get_string();
      if (stored != name) fail("expected tensor '" + std::string(name) + "', found '" + stored + "'");
      const auto rows = get<std::uint64_t>();
      const auto cols = get<std::uint64_t>();
      if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols()))
        fail("tensor '" + stored + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols));
      in_.read(reinterpret_cast<char *>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
      if (!in_) fail("truncated tensor '" + stored + "'");
    });
  }

  [[noreturn]] void fail(const std::string &msg) const { throw DataError("checkpoint " + path_ + ": " + msg); }

 private:
  std::istream &in_;
  std::string path_;
};

}  // namespace

nlohmann::json dims_to_json(const ModelDims &d) {
  return {{"num_nonterminals", d.shape.num_nonterminals},
          {"num_preterminals", d.shape.num_preterminals},
          {"vocab_size", d.shape.vocab_size},
          {"d_sym", d.d_sym},
          {"d_hidden", d.d_hidden},
          {"d_word", d.d_word},
          {"d_z", d.d_z},
          {"d_img", d.d_img}};
}

ModelDims dims_from_json(const nlohmann::json &j) {
  ModelDims d;
  d.shape.num_nonterminals = j.at("num_nonterminals").get<int>();
  d.shape.num_preterminals = j.at("num_preterminals").get<int>();
  d.shape.vocab_size = j.at("vocab_size").get<int>();
  d.d_sym = j.at("d_sym").get<int>();
  d.d_hidden = j.at("d_hidden").get<int>();
  d.d_word = j.at("d_word").get<int>();
  d.d_z = j.at("d_z").get<int>();
  d.d_img = j.at("d_img").get<int>();
  return d;
}

void save_checkpoint(const std::string &path, const Checkpoint &ckpt) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put_string(out, dims_to_json(ckpt.params.dims).dump());
    put<std::uint8_t>(out, ckpt.params.word_embeddings_frozen ? 1 : 0);
    put_string(out, ckpt.metadata.dump());
    put_tensors(out, ckpt.params);
    put<std::int64_t>(out, ckpt.optimizer.step);
    const bool has_moments = ckpt.optimizer.first_moment.num_values() == ckpt.params.num_values() &&
                             ckpt.optimizer.second_moment.num_values() == ckpt.params.num_values();
    put<std::uint8_t>(out, has_moments ? 1 : 0);
    if (has_moments) {
      put_tensors(out, ckpt.optimizer.first_moment);
      put_tensors(out, ckpt.optimizer.second_moment);
    }
    if (!out) throw DataError("failed writing checkpoint: " + path);
  }
  std::rename(tmp.c_str(), path.c_str());
}

Checkpoint load_checkpoint(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  Reader r(in, path);
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));

  Checkpoint ck;
  ModelDims dims;
  bool frozen = false;
  try {
    dims = dims_from_json(nlohmann::json::parse(r.get_string()));
    dims.check();
    frozen = r.get<std::uint8_t>() != 0;
    ck.metadata = nlohmann::json::parse(r.get_string());
  } catch (const nlohmann::json::exception &e) {
    r.fail(std::string("bad header: ") + e.what());
  } catch (const ConfigError &e) {
    r.fail(std::string("bad dimensions: ") + e.what());
  }
  ck.params = init_parameters(dims, 0, 0.0);
  ck.params.word_embeddings_frozen = frozen;
  r.get_tensors(ck.params);
  ck.optimizer = init_optimizer(ck.params);
  ck.optimizer.step = r.get<std::int64_t>();
  if (r.get<std::uint8_t>() != 0) {
    r.get_tensors(ck.optimizer.first_moment);
    r.get_tensors(ck.optimizer.second_moment);
  }
  return ck;
}

}  // namespace pcfg
