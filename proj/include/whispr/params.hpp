// whispr/params.hpp
//
// Named parameter store with per-entry freeze flags and layer groups, plus
// the WCK1 checkpoint format.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "whispr/binary_io.hpp"
#include "whispr/common.hpp"

namespace whispr {

struct ParamEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool frozen = false;
  std::uint32_t layer_index = 0;

  std::size_t size() const { return value.size(); }
};

/// Ordered (insertion order) name -> parameter map.
///
/// layer_index orders groups bottom-up: 0 is the feature extractor, the
/// recurrent layers follow and the output projection is the top group.
class ParamStore {
 public:
  std::size_t add(const std::string& name, std::vector<std::size_t> shape, std::uint32_t layer_index) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    ParamEntry e;
    e.name = name;
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    e.shape = std::move(shape);
    e.value.assign(n, 0.0);
    e.grad.assign(n, 0.0);
    e.layer_index = layer_index;
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.size() - 1;
  }

  std::size_t size() const { return entries_.size(); }
  ParamEntry& operator[](std::size_t i) { return entries_[i]; }
  const ParamEntry& operator[](std::size_t i) const { return entries_[i]; }
  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.size();
    return n;
  }

  std::uint32_t max_layer_index() const {
    std::uint32_t m = 0;
    for (const auto& e : entries_) m = std::max(m, e.layer_index);
    return m;
  }

  void set_all_frozen(bool frozen) {
    for (auto& e : entries_) e.frozen = frozen;
  }

  bool all_frozen() const {
    for (const auto& e : entries_) {
      if (!e.frozen) return false;
    }
    return true;
  }

  void zero_grad() {
    for (auto& e : entries_) std::fill(e.grad.begin(), e.grad.end(), 0.0);
  }

  /// Values must match in names, order and shapes; flags are copied too.
  void copy_values_from(const ParamStore& other) {
    if (other.size() != size()) throw RuntimeError("parameter store mismatch: entry count differs");
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& src = other[i];
      auto& dst = entries_[i];
      if (src.name != dst.name || src.shape != dst.shape) {
        throw RuntimeError("parameter store mismatch at entry " + dst.name + " (checkpoint has " + src.name + ")");
      }
      dst.value = src.value;
      dst.frozen = src.frozen;
      dst.layer_index = src.layer_index;
    }
  }

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Gradient accumulator shaped like a store; lets several utterances be
/// processed independently and reduced in a fixed order.
using GradBuffer = std::vector<std::vector<double>>;

inline GradBuffer make_grad_buffer(const ParamStore& ps) {
  GradBuffer g(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) g[i].assign(ps[i].size(), 0.0);
  return g;
}

inline void add_into(GradBuffer& dst, const GradBuffer& src, double scale = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    for (std::size_t k = 0; k < dst[i].size(); ++k) dst[i][k] += scale * src[i][k];
  }
}

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline void init_uniform(ParamEntry& e, std::size_t fan_in, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : e.value) v = (2.0 * rng.uniform() - 1.0) * a;
}

// ---------------------------------------------------------------------------
// WCK1 checkpoints: "WCK1", u32 count, then per entry u32 name length, name
// bytes, u8 frozen, u32 layer_index, u32 rank, rank x u32 dims, f32 values.

inline void write_checkpoint(std::ostream& out, const ParamStore& ps) {
  io::write_magic(out, "WCK1");
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ps.size()));
  for (const auto& e : ps.entries()) {
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    io::write_le<std::uint8_t>(out, e.frozen ? 1 : 0);
    io::write_le<std::uint32_t>(out, e.layer_index);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : e.value) io::write_le<float>(out, static_cast<float>(v));
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const ParamStore& ps) {
  auto out = io::open_out(path);
  write_checkpoint(out, ps);
  if (!out) throw RuntimeError("failed writing checkpoint " + path.string());
}

inline ParamStore read_checkpoint(std::istream& in, const std::string& what = "checkpoint") {
  io::expect_magic(in, "WCK1", what);
  const auto count = io::read_le<std::uint32_t>(in);
  ParamStore ps;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = io::read_le<std::uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const bool frozen = io::read_le<std::uint8_t>(in) != 0;
    const auto layer = io::read_le<std::uint32_t>(in);
    const auto rank = io::read_le<std::uint32_t>(in);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = io::read_le<std::uint32_t>(in);
    const auto idx = ps.add(name, shape, layer);
    ps[idx].frozen = frozen;
    for (double& v : ps[idx].value) v = io::read_le<float>(in);
  }
  return ps;
}

inline ParamStore load_checkpoint(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  return read_checkpoint(in, path.string());
}

/// Rounds every value to float precision, matching what a checkpoint stores.
inline void round_to_float(ParamStore& ps) {
  for (auto& e : ps.entries()) {
    for (double& v : e.value) v = static_cast<float>(v);
  }
}

}  // namespace whispr
