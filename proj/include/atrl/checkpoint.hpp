#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <atrl/attribute_loss.hpp>
#include <atrl/model.hpp>
#include <atrl/tensor.hpp>

namespace atrl {

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double ce = 0.0;
  double attr = 0.0;
  double total = 0.0;
  double val_top1 = 0.0;
  double seconds = 0.0;
};

struct RunState {
  std::size_t epoch = 0;  // next epoch to run
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> velocity;
  std::vector<EpochStats> history;
};

struct CheckpointInfo {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::string config_text;
};

// Checkpoint layout (little-endian): magic "ATRL", u32 version, u64 epoch /
// step / seed, a length-prefixed config text blob, the center bank (active
// flag, alpha, feature dim, then id/count/values per center), the history
// table, and finally a tensor table of (kind, name, shape, f64 values)
// where kind 0 = parameter, 1 = buffer, 2 = velocity. Writes go to a
// temporary file renamed into place, so a crash never leaves a partial
// checkpoint behind.
namespace detail {

constexpr char kCkptMagic[4] = {'A', 'T', 'R', 'L'};
constexpr std::uint32_t kCkptVersion = 1;

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void i64(std::int64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::vector<char> bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  void raw(void* p, std::size_t n) {
    if (pos_ + n > bytes_.size())
      throw Error("truncated checkpoint: " + path_);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() { std::uint8_t v; raw(&v, 1); return v; }
  std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
  std::int64_t i64() { std::int64_t v; raw(&v, 8); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  std::string str() {
    const std::uint64_t n = u64();
    if (pos_ + n > bytes_.size())
      throw Error("truncated checkpoint: " + path_);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void expect_eof() const {
    if (pos_ != bytes_.size())
      throw Error("checkpoint has trailing bytes: " + path_);
  }

 private:
  std::vector<char> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline void write_tensor(ByteWriter& w, std::uint8_t kind,
                         const std::string& name, const Shape& shape,
                         const std::vector<double>& values) {
  w.u8(kind);
  w.str(name);
  w.u64(shape.size());
  for (std::size_t d : shape) w.u64(d);
  w.u64(values.size());
  for (double v : values) w.f64(v);
}

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  return bytes;
}

inline void read_header(ByteReader& r, const std::string& path,
                        CheckpointInfo& info) {
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kCkptMagic, 4) != 0)
    throw Error("not a checkpoint file: " + path);
  const std::uint32_t version = r.u32();
  if (version != kCkptVersion)
    throw Error("unsupported checkpoint version " + std::to_string(version) +
                ": " + path);
  info.epoch = r.u64();
  info.step = r.u64();
  info.seed = r.u64();
  info.config_text = r.str();
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParameterSet& params,
                            const AttributeCenterBank& bank,
                            const RunState& state, std::uint64_t seed,
                            const std::string& config_text) {
  detail::ByteWriter w;
  w.raw(detail::kCkptMagic, 4);
  w.u32(detail::kCkptVersion);
  w.u64(state.epoch);
  w.u64(state.step);
  w.u64(seed);
  w.str(config_text);

  w.u8(bank.active() ? 1 : 0);
  w.f64(bank.alpha());
  w.u64(bank.feature_dim());
  const auto ids = bank.ids();
  w.u64(ids.size());
  for (std::int64_t id : ids) {
    w.i64(id);
    w.u64(bank.count(id));
    for (double v : bank.center(id)) w.f64(v);
  }

  w.u64(state.history.size());
  for (const EpochStats& h : state.history) {
    w.u64(h.epoch);
    w.f64(h.lr);
    w.f64(h.ce);
    w.f64(h.attr);
    w.f64(h.total);
    w.f64(h.val_top1);
    w.f64(h.seconds);
  }

  w.u64(params.entries().size() + state.velocity.size());
  for (const auto& entry : params.entries())
    detail::write_tensor(w, entry.trainable ? 0 : 1, entry.name,
                         entry.tensor.shape(), entry.tensor.values());
  for (const auto& [name, values] : state.velocity)
    detail::write_tensor(w, 2, name, {values.size()}, values);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint: " + tmp);
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw Error("failed writing checkpoint: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

// Header-only peek: enough to rebuild the model from the stored config
// before committing to a full restore.
inline CheckpointInfo peek_checkpoint(const std::string& path) {
  detail::ByteReader r(detail::read_file(path), path);
  CheckpointInfo info;
  detail::read_header(r, path, info);
  return info;
}

// Restores into a model built with the same architecture: every stored
// tensor must match an existing entry by name, shape, and kind, and every
// model entry must be covered.
inline CheckpointInfo load_checkpoint(const std::string& path,
                                      ParameterSet& params,
                                      AttributeCenterBank& bank,
                                      RunState& state) {
  detail::ByteReader r(detail::read_file(path), path);
  CheckpointInfo info;
  detail::read_header(r, path, info);

  const bool active = r.u8() != 0;
  const double alpha = r.f64();
  if (alpha != bank.alpha())
    throw Error("checkpoint center alpha " + std::to_string(alpha) +
                " does not match the configured " + std::to_string(bank.alpha()));
  const std::uint64_t dim = r.u64();
  if (dim != bank.feature_dim())
    throw Error("checkpoint feature dim " + std::to_string(dim) +
                " does not match the bank's " +
                std::to_string(bank.feature_dim()));
  const std::uint64_t n_centers = r.u64();
  std::set<std::int64_t> seen;
  for (std::uint64_t i = 0; i < n_centers; ++i) {
    const std::int64_t id = r.i64();
    const std::uint64_t count = r.u64();
    std::vector<double> center(dim);
    for (auto& v : center) v = r.f64();
    if (!bank.has(id))
      throw Error("checkpoint center for unknown attribute id " +
                  std::to_string(id));
    bank.restore(id, std::move(center), count);
    seen.insert(id);
  }
  for (std::int64_t id : bank.ids())
    if (seen.count(id) == 0)
      throw Error("checkpoint is missing the center for attribute id " +
                  std::to_string(id));
  bank.set_active(active);

  state.history.clear();
  const std::uint64_t n_hist = r.u64();
  for (std::uint64_t i = 0; i < n_hist; ++i) {
    EpochStats h;
    h.epoch = r.u64();
    h.lr = r.f64();
    h.ce = r.f64();
    h.attr = r.f64();
    h.total = r.f64();
    h.val_top1 = r.f64();
    h.seconds = r.f64();
    state.history.push_back(h);
  }

  state.velocity.clear();
  std::set<std::string> restored;
  const std::uint64_t n_tensors = r.u64();
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    const std::uint8_t kind = r.u8();
    const std::string name = r.str();
    const std::uint64_t rank = r.u64();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    const std::uint64_t numel = r.u64();
    if (numel != shape_numel(shape))
      throw Error("checkpoint tensor " + name + " has inconsistent shape");
    std::vector<double> values(numel);
    for (auto& v : values) v = r.f64();

    if (kind == 2) {
      state.velocity[name] = std::move(values);
      continue;
    }
    if (kind > 2) throw Error("checkpoint tensor " + name + " has bad kind");
    if (!params.contains(name))
      throw Error("checkpoint tensor " + name + " is not in the model");
    if ((kind == 0) != params.entry(name).trainable)
      throw Error("checkpoint tensor " + name + " has mismatched kind");
    Tensor& target = params.at(name);
    if (target.shape() != shape)
      throw Error("checkpoint tensor " + name + " has shape " +
                  shape_str(shape) + ", model expects " +
                  shape_str(target.shape()));
    target.values() = std::move(values);
    restored.insert(name);
  }
  for (const auto& entry : params.entries())
    if (restored.count(entry.name) == 0)
      throw Error("checkpoint is missing tensor " + entry.name);
  for (const auto& [name, values] : state.velocity) {
    if (!params.contains(name))
      throw Error("checkpoint velocity " + name + " is not in the model");
    if (values.size() != params.at(name).numel())
      throw Error("checkpoint velocity " + name + " has wrong length");
  }

  r.expect_eof();
  state.epoch = info.epoch;
  state.step = info.step;
  return info;
}

}  // namespace atrl
