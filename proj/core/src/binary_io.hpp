#pragma once

// Little-endian record I/O shared by the checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sparsefront/error.hpp"

namespace sparsefront::detail {

template <class T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc) {
    require(static_cast<bool>(out_), ErrorKind::Io, "cannot write " + path);
  }

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  template <class T>
  void put(T value) {
    value = to_little(value);
    bytes(&value, sizeof(T));
  }
  void finish(const std::string& path) {
    out_.flush();
    require(static_cast<bool>(out_), ErrorKind::Io, "write failed for " + path);
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
    data_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  void bytes(void* dst, std::size_t n) {
    require(pos_ + n <= data_.size(), ErrorKind::TruncatedFile, path_ + ": truncated checkpoint");
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T get() {
    T value;
    bytes(&value, sizeof(T));
    return to_little(value);
  }
  std::string string(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool at_end() const noexcept { return pos_ == data_.size(); }
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

}  // namespace sparsefront::detail
