#pragma once

// Little-endian binary record helpers shared by the checkpoint and dataset
// containers. Readers bounds-check every read and report truncation.

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "flowpose/error.hpp"

namespace flowpose::io {

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f64s(const std::vector<double>& v) {
    u64(v.size());
    bytes(v.data(), v.size() * sizeof(double));
  }
  const std::vector<unsigned char>& buffer() const { return buf_; }
  void save(const std::string& path) const;

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> data, std::string what) : data_(std::move(data)), what_(std::move(what)) {}
  static Reader open(const std::string& path, std::string what);

  void bytes(void* out, std::size_t n) {
    if (n > data_.size() - pos_) throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_));
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, sizeof v); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, sizeof v); return v; }
  double f64() { double v; bytes(&v, sizeof v); return v; }
  std::string str() {
    const auto n = u32();
    if (n > remaining()) throw FormatError(what_ + ": truncated string at byte " + std::to_string(pos_));
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::vector<double> f64s() {
    const auto n = u64();
    if (n > remaining() / sizeof(double)) throw FormatError(what_ + ": truncated array at byte " + std::to_string(pos_));
    std::vector<double> v(n);
    bytes(v.data(), n * sizeof(double));
    return v;
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  const std::string& what() const { return what_; }

 private:
  std::vector<unsigned char> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace flowpose::io
