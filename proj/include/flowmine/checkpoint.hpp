#pragma once

// Checkpoint layout (all integers little-endian):
//   "FLMN" | u16 version
//   u32 vocab_size, layers, heads, d_model, d_ff, max_seq, tie_head
//   u64 dropout (IEEE-754 bits) | u64 vocabulary hash
//   u32 tensor count, then per tensor:
//     u32 name length | name bytes | u32 rows | u32 cols | rows*cols f64, row-major
//   u64 FNV-1a checksum of everything after the version field

#include <bit>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "flowmine/encoder.hpp"
#include "flowmine/error.hpp"
#include "flowmine/random.hpp"

namespace flowmine {

inline constexpr std::string_view kCheckpointMagic = "FLMN";
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  EncoderModel model;
  std::uint64_t vocab_hash = 0;
};

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    auto u = static_cast<std::make_unsigned_t<T>>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_bytes(std::string_view s) { bytes_.append(s); }
  std::string& bytes() { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::size_t pos, std::size_t end)
      : bytes_(bytes), pos_(pos), end_(end) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw data_error("checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_;
  std::size_t end_;
};

}  // namespace detail

inline std::string save_checkpoint(const EncoderModel& model, std::uint64_t vocab_hash) {
  const auto& c = model.config;
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic);
  w.put<std::uint16_t>(kCheckpointVersion);
  for (int v : {c.vocab_size, c.layers, c.heads, c.d_model, c.d_ff, c.max_seq})
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.put<std::uint32_t>(c.tie_head ? 1u : 0u);
  w.put_f64(c.dropout);
  w.put<std::uint64_t>(vocab_hash);
  std::uint32_t count = 0;
  model.params.for_each([&](const std::string&, const Matrix&) { ++count; });
  w.put<std::uint32_t>(count);
  model.params.for_each([&](const std::string& name, const Matrix& m) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) w.put_f64(m(i, j));
  });
  const auto header = kCheckpointMagic.size() + sizeof(std::uint16_t);
  const auto sum = fnv1a64(std::string_view(w.bytes()).substr(header));
  w.put<std::uint64_t>(sum);
  return std::move(w.bytes());
}

/// Parses a checkpoint; throws without returning a partial model.
inline Checkpoint load_checkpoint(std::string_view bytes) {
  const auto header = kCheckpointMagic.size() + sizeof(std::uint16_t);
  if (bytes.size() < header || bytes.substr(0, 4) != kCheckpointMagic)
    throw data_error("not a checkpoint (bad magic)");
  detail::ByteReader head(bytes, 4, bytes.size());
  const auto version = head.get<std::uint16_t>();
  if (version != kCheckpointVersion)
    throw data_error("unsupported checkpoint version " + std::to_string(version));
  if (bytes.size() < header + sizeof(std::uint64_t)) throw data_error("checkpoint truncated");

  const auto payload_end = bytes.size() - sizeof(std::uint64_t);
  detail::ByteReader r(bytes, header, payload_end);
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(r.get<std::uint32_t>());
  cfg.layers = static_cast<int>(r.get<std::uint32_t>());
  cfg.heads = static_cast<int>(r.get<std::uint32_t>());
  cfg.d_model = static_cast<int>(r.get<std::uint32_t>());
  cfg.d_ff = static_cast<int>(r.get<std::uint32_t>());
  cfg.max_seq = static_cast<int>(r.get<std::uint32_t>());
  cfg.tie_head = r.get<std::uint32_t>() != 0;
  cfg.dropout = r.get_f64();
  const auto vocab_hash = r.get<std::uint64_t>();
  try {
    check(cfg);
  } catch (const Error& e) {
    throw data_error(std::string("checkpoint carries an invalid model config: ") + e.what());
  }

  // Shapes come from a freshly initialised model so names and sizes are checked.
  EncoderModel model = init_model(cfg, 0, 0.0);
  std::uint32_t expected = 0;
  std::size_t expected_size = r.pos() + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  model.params.for_each([&](const std::string& name, const Matrix& m) {
    ++expected;
    expected_size += 3 * sizeof(std::uint32_t) + name.size() +
                     sizeof(double) * static_cast<std::size_t>(m.size());
  });
  if (bytes.size() < expected_size) throw data_error("checkpoint truncated");
  if (bytes.size() > expected_size) throw data_error("checkpoint has trailing bytes");

  detail::ByteReader tail(bytes, payload_end, bytes.size());
  const auto stored = tail.get<std::uint64_t>();
  if (stored != fnv1a64(bytes.substr(header, payload_end - header)))
    throw data_error("checkpoint checksum mismatch");

  const auto count = r.get<std::uint32_t>();
  if (count != expected)
    throw data_error("checkpoint has " + std::to_string(count) + " tensors, expected " +
                     std::to_string(expected));
  model.params.for_each([&](const std::string& name, Matrix& m) {
    const auto len = r.get<std::uint32_t>();
    const auto got = r.get_bytes(len);
    if (got != name) throw data_error("checkpoint tensor '" + got + "' where '" + name + "' expected");
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    if (rows != m.rows() || cols != m.cols())
      throw data_error("checkpoint tensor '" + name + "' has wrong shape");
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.get_f64();
  });
  return Checkpoint{std::move(model), vocab_hash};
}

}  // namespace flowmine
