#pragma once

// Binary checkpoints: every named parameter and buffer at 32-bit precision,
// optimizer moments alongside, with the run config embedded as text.
//
// Layout: magic "GRN1", version u32, config length u32 + UTF-8 bytes,
// tensor count u32, then per tensor: name length u16 + name, rank u8,
// dims u32 each, raw little-endian f32 values.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "grn/blocks.hpp"
#include "grn/train.hpp"

namespace grn {

struct BadMagicError : DataError {
  using DataError::DataError;
};
struct VersionMismatchError : DataError {
  using DataError::DataError;
};
struct TruncatedError : DataError {
  using DataError::DataError;
};

namespace detail {

constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_bytes(std::vector<unsigned char>& out, const void* p, std::size_t n) {
  const unsigned char* b = static_cast<const unsigned char*>(p);
  out.insert(out.end(), b, b + n);
}

inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<unsigned char>& out, float v) {
  std::uint32_t bits;
  static_assert(sizeof bits == sizeof v);
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct ByteReader {
  const unsigned char* p;
  std::size_t left;
  const std::string& path;

  void need(std::size_t n) const {
    if (left < n) throw TruncatedError("checkpoint truncated: " + path);
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, p, n);
    p += n;
    left -= n;
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    left -= 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    left -= 4;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

inline void put_tensor(std::vector<unsigned char>& out, const std::string& name,
                       const Shape& shape, const double* data, std::size_t n) {
  if (name.size() > 0xffff) fail("checkpoint: tensor name too long: " + name);
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  put_bytes(out, name.data(), name.size());
  out.push_back(static_cast<unsigned char>(shape.size()));
  for (int d : shape) put_u32(out, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < n; ++i) put_f32(out, static_cast<float>(data[i]));
}

}  // namespace detail

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string config;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const NamedTensor& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline void save_checkpoint(const std::string& path, const ParamStore& ps, const Adam& opt,
                            const std::string& config_text) {
  std::vector<unsigned char> out;
  detail::put_bytes(out, "GRN1", 4);
  detail::put_u32(out, detail::kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(config_text.size()));
  detail::put_bytes(out, config_text.data(), config_text.size());

  std::uint32_t count = 1;  // adam.t
  for (const ParamEntry& e : ps.entries()) count += e.trainable ? 3 : 1;
  detail::put_u32(out, count);

  for (const ParamEntry& e : ps.entries()) {
    const std::size_t n = static_cast<std::size_t>(e.t.numel());
    detail::put_tensor(out, e.name, e.t.shape(), e.t.data(), n);
    if (!e.trainable) continue;
    for (const char* prefix : {"adam.m.", "adam.v."}) {
      const auto& bank = prefix[5] == 'm' ? opt.m : opt.v;
      auto it = bank.find(e.name);
      std::vector<double> zeros;
      const double* src;
      if (it != bank.end() && it->second.size() == n) {
        src = it->second.data();
      } else {
        zeros.assign(n, 0.0);
        src = zeros.data();
      }
      detail::put_tensor(out, prefix + e.name, e.t.shape(), src, n);
    }
  }
  const double tval = static_cast<double>(opt.t);
  detail::put_tensor(out, "adam.t", Shape{1}, &tval, 1);

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail_data("cannot write checkpoint: " + path);
  const std::size_t written = std::fwrite(out.data(), 1, out.size(), f);
  std::fclose(f);
  if (written != out.size()) fail_data("short write: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) fail_data("cannot open checkpoint: " + path);
  std::vector<unsigned char> buf;
  unsigned char chunk[65536];
  std::size_t got;
  while ((got = std::fread(chunk, 1, sizeof chunk, f)) > 0) buf.insert(buf.end(), chunk, chunk + got);
  std::fclose(f);

  detail::ByteReader r{buf.data(), buf.size(), path};
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "GRN1", 4) != 0) throw BadMagicError("checkpoint: bad magic in " + path);
  const std::uint32_t version = r.u32();
  if (version != detail::kCheckpointVersion)
    throw VersionMismatchError("checkpoint: version " + std::to_string(version) +
                               " unsupported (expected " +
                               std::to_string(detail::kCheckpointVersion) + "): " + path);
  Checkpoint ck;
  const std::uint32_t clen = r.u32();
  ck.config.resize(clen);
  if (clen) r.raw(ck.config.data(), clen);
  const std::uint32_t count = r.u32();
  ck.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint16_t nlen = r.u16();
    t.name.resize(nlen);
    if (nlen) r.raw(t.name.data(), nlen);
    r.need(1);
    const int rank = *r.p;
    ++r.p;
    --r.left;
    std::size_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32();
      t.shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    t.data.resize(numel);
    for (std::size_t j = 0; j < numel; ++j) t.data[j] = r.f32();
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

// restores parameters (and optimizer state when present) into a live store
inline void apply_checkpoint(const Checkpoint& ck, ParamStore& ps, Adam* opt) {
  for (const ParamEntry& e : ps.entries()) {
    const NamedTensor* t = ck.find(e.name);
    if (!t) fail_data("checkpoint is missing tensor '" + e.name + "'");
    if (t->shape != e.t.shape())
      fail_data("checkpoint tensor '" + e.name + "' has shape " + shape_str(t->shape) +
                ", expected " + shape_str(e.t.shape()));
    double* p = e.t.data();
    for (std::size_t i = 0; i < t->data.size(); ++i) p[i] = static_cast<double>(t->data[i]);
    if (!opt || !e.trainable) continue;
    for (const char* prefix : {"adam.m.", "adam.v."}) {
      const NamedTensor* mt = ck.find(prefix + e.name);
      if (!mt) fail_data("checkpoint is missing tensor '" + (prefix + e.name) + "'");
      if (mt->shape != e.t.shape())
        fail_data("checkpoint tensor '" + (prefix + e.name) + "' has a mismatched shape");
      std::vector<double>& bank = (prefix[5] == 'm' ? opt->m : opt->v)[e.name];
      bank.resize(mt->data.size());
      for (std::size_t i = 0; i < mt->data.size(); ++i) bank[i] = static_cast<double>(mt->data[i]);
    }
  }
  if (opt) {
    const NamedTensor* t = ck.find("adam.t");
    if (!t || t->data.empty()) fail_data("checkpoint is missing tensor 'adam.t'");
    opt->t = static_cast<long long>(t->data[0]);
  }
}

}  // namespace grn
