#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "graspml/model.hpp"
#include "graspml/optimizer.hpp"

namespace graspml {

/// On-disk layout (little-endian):
///   magic "MLGSL-CKPT\n", u32 version, u32 scalar size, u64 config hash,
///   spec text (u64 length + bytes), u32 block count, blocks (name, u64 count, raw values),
///   u8 optimizer flag, then optionally u64 step, four f64 options, first and second moments.
inline constexpr char kCheckpointMagic[] = "MLGSL-CKPT\n";
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  Model<T> model;
  std::optional<Adam<T>> optimizer;
  std::uint64_t config_hash = 0;
};

namespace detail {

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write checkpoint " + path.string());
  }
  template <typename V>
  void pod(const V& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(V));
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void string(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  template <typename V>
  void array(std::span<const V> v) {
    pod<std::uint64_t>(v.size());
    bytes(v.data(), v.size() * sizeof(V));
  }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("checkpoint write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path.string()) {
    if (!in_) throw std::runtime_error("cannot open checkpoint " + path_);
  }
  template <typename V>
  V pod() {
    V v{};
    bytes(&v, sizeof(V));
    return v;
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw std::runtime_error("corrupt checkpoint " + path_ + ": truncated");
  }
  std::string string(std::size_t limit = 1 << 20) {
    const auto n = pod<std::uint64_t>();
    if (n > limit) throw std::runtime_error("corrupt checkpoint " + path_ + ": oversized string");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  template <typename V>
  void array_into(std::span<V> dst, const std::string& what) {
    const auto n = pod<std::uint64_t>();
    if (n != dst.size()) {
      throw std::runtime_error("corrupt checkpoint " + path_ + ": block " + what + " has " + std::to_string(n) +
                               " values, expected " + std::to_string(dst.size()));
    }
    bytes(dst.data(), n * sizeof(V));
  }
  const std::string& path() const { return path_; }

 private:
  std::ifstream in_;
  std::string path_;
};

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const Adam<T>* optimizer = nullptr,
                     std::uint64_t config_hash = 0) {
  detail::Writer w(path);
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
  w.pod(kCheckpointVersion);
  w.pod<std::uint32_t>(sizeof(T));
  w.pod(config_hash);
  w.string(model.spec().to_text());
  const auto blocks = model.blocks();
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    w.string(b.name);
    w.array(b.values);
  }
  w.pod<std::uint8_t>(optimizer ? 1 : 0);
  if (optimizer) {
    w.pod(optimizer->step_count);
    w.pod(optimizer->options.learning_rate);
    w.pod(optimizer->options.beta1);
    w.pod(optimizer->options.beta2);
    w.pod(optimizer->options.epsilon);
    for (const auto* moments : {&optimizer->first, &optimizer->second}) {
      for (const auto& m : *moments) w.array(std::span<const T>(m));
    }
  }
  w.finish();
}

/// Loads a checkpoint; when `expected` is given the stored spec must match it exactly.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, const ModelSpec* expected = nullptr) {
  detail::Reader r(path);
  char magic[sizeof(kCheckpointMagic) - 1];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + r.path());
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  if (r.pod<std::uint32_t>() != sizeof(T)) throw std::runtime_error("checkpoint scalar type mismatch");
  Checkpoint<T> ck;
  ck.config_hash = r.pod<std::uint64_t>();
  const ModelSpec spec = ModelSpec::from_text(r.string());
  if (expected && !(spec == *expected)) {
    throw std::invalid_argument("checkpoint spec mismatch:\n" + spec_diff(*expected, spec));
  }
  ck.model = Model<T>::build(spec, 0);
  auto blocks = ck.model.blocks();
  if (r.pod<std::uint32_t>() != blocks.size()) throw std::runtime_error("corrupt checkpoint: block count");
  for (auto& b : blocks) {
    const std::string name = r.string();
    if (name != b.name) throw std::runtime_error("corrupt checkpoint: expected block " + b.name + ", found " + name);
    r.array_into(b.values, name);
  }
  if (r.pod<std::uint8_t>()) {
    Adam<T> opt(ck.model, {});
    opt.step_count = r.pod<std::uint64_t>();
    opt.options.learning_rate = r.pod<double>();
    opt.options.beta1 = r.pod<double>();
    opt.options.beta2 = r.pod<double>();
    opt.options.epsilon = r.pod<double>();
    for (auto* moments : {&opt.first, &opt.second}) {
      for (std::size_t b = 0; b < moments->size(); ++b) r.array_into(std::span<T>((*moments)[b]), blocks[b].name);
    }
    ck.optimizer = std::move(opt);
  }
  return ck;
}

}  // namespace graspml
