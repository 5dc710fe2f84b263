#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "gpucrsim/errors.hpp"

namespace gpucrsim {

// Little-endian byte writer/reader for the wire formats.
class ByteWriter {
 public:
  std::vector<uint8_t> take() { return std::move(buf_); }
  const std::vector<uint8_t>& data() const { return buf_; }
  size_t size() const { return buf_.size(); }

  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) { raw(&v, 2); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void bytes(const void* p, size_t n) { raw(p, n); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void vec_u64(const std::vector<uint64_t>& v) {
    u32(static_cast<uint32_t>(v.size()));
    for (uint64_t x : v) u64(x);
  }
  // Patch a previously written u64 (for section-length backfills).
  void patch_u64(size_t offset, uint64_t v) { std::memcpy(buf_.data() + offset, &v, 8); }

 private:
  void raw(const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t size) : data_(data), size_(size) {}
  explicit ByteReader(const std::vector<uint8_t>& v) : ByteReader(v.data(), v.size()) {}

  size_t pos() const { return pos_; }
  size_t remaining() const { return size_ - pos_; }
  bool done() const { return pos_ == size_; }

  uint8_t u8() { return *take(1); }
  uint16_t u16() { return load<uint16_t>(); }
  uint32_t u32() { return load<uint32_t>(); }
  uint64_t u64() { return load<uint64_t>(); }

  std::vector<uint8_t> bytes(size_t n) {
    const uint8_t* p = take(n);
    return {p, p + n};
  }

  std::string str() {
    uint32_t n = u32();
    if (n > remaining()) fail("string length past end");
    const uint8_t* p = take(n);
    return {reinterpret_cast<const char*>(p), n};
  }

  std::vector<uint64_t> vec_u64(uint64_t max_count = UINT64_MAX) {
    uint32_t n = u32();
    if (n > max_count || static_cast<uint64_t>(n) * 8 > remaining()) fail("vector length past end");
    std::vector<uint64_t> v(n);
    for (auto& x : v) x = u64();
    return v;
  }

  [[noreturn]] void fail(const std::string& reason) const {
    throw CorruptImageError(pos_, reason);
  }

 private:
  template <typename T>
  T load() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const uint8_t* take(size_t n) {
    if (n > size_ - pos_) fail("truncated input");
    const uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }

  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
};

}  // namespace gpucrsim
