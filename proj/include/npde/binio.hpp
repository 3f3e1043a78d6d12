#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "npde/error.hpp"

namespace npde::binio {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are not supported");

/// Appends little-endian scalars to a byte buffer.
class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void bytes(std::string_view s) { buf_.append(s); }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }

  const std::string& buffer() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

 private:
  std::string buf_;
};

/// Sequential reader; every failure names the byte offset.
class Reader {
 public:
  Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::uint32_t u32() { return scalar<std::uint32_t>("u32"); }
  float f32() { return scalar<float>("f32"); }
  double f64() { return scalar<double>("f64"); }
  std::string_view bytes(std::size_t n, const char* field = "bytes") {
    need(n, field);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* out, std::size_t n, const char* field) {
    need(n, field);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  [[noreturn]] void fail(const std::string& msg) const { fail_at(pos_, msg); }
  [[noreturn]] void fail_at(std::size_t offset, const std::string& msg) const {
    throw FormatError(what_ + ": " + msg + " at offset " + std::to_string(offset));
  }

 private:
  void need(std::size_t n, const char* field) const {
    if (data_.size() - pos_ < n) {
      fail("truncated while reading " + std::string(field) + " (need " + std::to_string(n) +
           " bytes, have " + std::to_string(data_.size() - pos_) + ")");
    }
  }
  template <typename V>
  V scalar(const char* field) {
    V v;
    raw(&v, sizeof v, field);
    return v;
  }

  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

/// Whole-file helpers; failures raise IoError.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace npde::binio
