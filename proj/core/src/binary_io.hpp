#pragma once

// Little-endian byte encoding shared by the native binary formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "gestinv/error.hpp"

namespace gestinv::binary {

class Writer {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_arithmetic_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    buf_.insert(buf_.end(), bytes, bytes + sizeof(T));
  }

  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }

  void put_doubles(std::span<const double> values) {
    for (double v : values) put(v);
  }

  const std::vector<unsigned char>& bytes() const noexcept { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> bytes) : buf_(std::move(bytes)) {}

  template <typename T>
  T get(const char* what) {
    static_assert(std::is_arithmetic_v<T>);
    require(sizeof(T), what);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, buf_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }

  std::string get_string(std::size_t n, const char* what) {
    require(n, what);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::vector<double> get_doubles(std::size_t n, const char* what) {
    require(n * sizeof(double), what);
    std::vector<double> out(n);
    for (auto& v : out) v = get<double>(what);
    return out;
  }

  std::size_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == buf_.size(); }
  std::size_t size() const noexcept { return buf_.size(); }

  void require(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) {
      throw ParseError("truncated file: expected " + std::to_string(n) + " bytes of " + what +
                           " at byte offset " + std::to_string(pos_) + ", file has " +
                           std::to_string(buf_.size()) + " bytes",
                       pos_);
    }
  }

 private:
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

}  // namespace gestinv::binary
