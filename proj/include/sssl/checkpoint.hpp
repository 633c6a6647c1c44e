#pragma once

#include <zlib.h>

#include <cstring>
#include <map>
#include <sstream>
#include <string>

#include "sssl/config.hpp"
#include "sssl/image.hpp"
#include "sssl/optim.hpp"

namespace sssl {

struct TrainState {
  TrainConfig cfg;
  Model<float> student;
  Model<float> teacher;
  AdamState<float> adam;
  Tensor<float> center;
  std::size_t step = 0;
  Rng rng;

  // Student from the seed, teacher an exact copy of it, zero moments and center.
  static TrainState init(const TrainConfig& cfg) {
    cfg.validate();
    TrainState s;
    s.cfg = cfg;
    s.rng.seed(cfg.seed);
    s.student = Model<float>::init(cfg.encoder, cfg.head, s.rng);
    s.teacher = s.student.clone();
    s.adam = AdamState<float>::zeros_like(s.student.named());
    s.center = Tensor<float>({cfg.head.prototypes});
    return s;
  }

  NamedTensors<float> all_tensors() const {
    NamedTensors<float> out;
    for (auto& [n, t] : student.named()) out.emplace_back("student/" + n, t);
    for (auto& [n, t] : teacher.named()) out.emplace_back("teacher/" + n, t);
    const auto names = student.named();
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace_back("adam_m/" + names[i].first, adam.m[i]);
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace_back("adam_v/" + names[i].first, adam.v[i]);
    out.emplace_back("center", center);
    return out;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void raw(const std::string& s) { bytes_ += s; }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  std::string& bytes() { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::size_t end, std::string path) : bytes_(bytes), end_(end), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return raw(u32()); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) fail(errc::corrupt_checkpoint, path_ + ": truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t end_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::string& bytes, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n)));
}

inline constexpr std::uint32_t checkpoint_version = 1;

}  // namespace detail

// Layout (little-endian): "SSSL", u32 version, u64 model hash, u64 step,
// str rng state, str config text, u32 tensor count, then per tensor
// (str name, u32 rank, u64 dims[rank], f32 payload), then u32 CRC32 of
// everything before it. str = u32 length + bytes.
inline std::string encode_checkpoint(const TrainState& state) {
  detail::ByteWriter w;
  w.raw("SSSL");
  w.u32(detail::checkpoint_version);
  w.u64(state.cfg.model_hash());
  w.u64(state.step);
  std::ostringstream rng_text;
  rng_text << state.rng;
  w.str(rng_text.str());
  w.str(to_text(state.cfg));
  const auto tensors = state.all_tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    for (float v : t.data()) w.f32(v);
  }
  const std::uint32_t crc = detail::crc32_of(w.bytes(), w.bytes().size());
  w.u32(crc);
  return std::move(w.bytes());
}

inline void save_checkpoint(const TrainState& state, const std::string& path) {
  detail::write_file_bytes(path, encode_checkpoint(state));
}

// With `expected`, a checkpoint built for a different model shape is a
// config_mismatch error.
inline TrainState decode_checkpoint(const std::string& bytes, const std::string& path = "<memory>",
                                    const TrainConfig* expected = nullptr) {
  if (bytes.size() < 8 || bytes.compare(0, 4, "SSSL") != 0)
    fail(errc::corrupt_checkpoint, path + ": bad magic");
  {
    detail::ByteReader head(bytes, bytes.size(), path);
    head.raw(4);
    if (const auto version = head.u32(); version != detail::checkpoint_version)
      fail(errc::corrupt_checkpoint, path + ": unsupported version " + std::to_string(version));
  }
  if (bytes.size() < 12) fail(errc::corrupt_checkpoint, path + ": truncated");
  const std::size_t body = bytes.size() - 4;
  detail::ByteReader crc_reader(bytes, bytes.size(), path);
  crc_reader.raw(body);
  if (crc_reader.u32() != detail::crc32_of(bytes, body))
    fail(errc::corrupt_checkpoint, path + ": checksum mismatch (file truncated or corrupted)");

  detail::ByteReader r(bytes, body, path);
  r.raw(8);
  const std::uint64_t hash = r.u64();
  const std::uint64_t step = r.u64();
  const std::string rng_text = r.str();
  const std::string cfg_text = r.str();
  if (expected && expected->model_hash() != hash)
    fail(errc::config_mismatch, path + ": checkpoint was built for a different model config");
  TrainConfig cfg;
  try {
    cfg = parse_config(cfg_text);
  } catch (const error& e) {
    fail(errc::corrupt_checkpoint, path + ": embedded config unreadable: " + e.what());
  }
  if (cfg.model_hash() != hash) fail(errc::corrupt_checkpoint, path + ": embedded config does not match its hash");

  TrainState state;
  state.cfg = cfg;
  state.student = Model<float>::init(cfg.encoder, cfg.head, state.rng);
  state.teacher = state.student.clone();
  state.adam = AdamState<float>::zeros_like(state.student.named());
  state.center = Tensor<float>({cfg.head.prototypes});
  std::map<std::string, Tensor<float>> slots;
  for (auto& [name, t] : state.all_tensors()) slots.emplace(name, t);

  const std::uint32_t count = r.u32();
  if (count != slots.size()) fail(errc::corrupt_checkpoint, path + ": unexpected tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    auto it = slots.find(name);
    if (it == slots.end()) fail(errc::corrupt_checkpoint, path + ": unknown tensor '" + name + "'");
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    if (shape != it->second.shape()) fail(errc::corrupt_checkpoint, path + ": shape mismatch for '" + name + "'");
    auto dst = it->second.data();
    for (auto& v : dst) v = r.f32();
    slots.erase(it);
  }
  if (r.pos() != body) fail(errc::corrupt_checkpoint, path + ": trailing bytes before checksum");

  state.step = step;
  state.adam.step = step;
  std::istringstream rng_in(rng_text);
  rng_in >> state.rng;
  if (!rng_in) fail(errc::corrupt_checkpoint, path + ": bad rng state");
  return state;
}

inline TrainState load_checkpoint(const std::string& path, const TrainConfig* expected = nullptr) {
  return decode_checkpoint(detail::read_file_bytes(path), path, expected);
}

}  // namespace sssl
