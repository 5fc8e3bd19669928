#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "vdpg/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts unsupported");

namespace vdpg {

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw FormatError("cannot open '" + path + "' for writing", 0);
  }

  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    offset_ += sizeof(T);
  }

  void put_bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    offset_ += n;
  }

  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }

  std::uint64_t offset() const { return offset_; }

  void close() {
    out_.close();
    if (!out_) throw FormatError("write failure on '" + path_ + "'", offset_);
  }

 private:
  std::string path_;
  std::ofstream out_;
  std::uint64_t offset_ = 0;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw FormatError("cannot open '" + path + "' for reading", 0);
    const auto sz = in.tellg();
    in.seekg(0);
    buf_.resize(static_cast<std::size_t>(sz));
    in.read(reinterpret_cast<char*>(buf_.data()), sz);
    if (!in) throw FormatError("read failure on '" + path + "'", 0);
  }

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (offset_ + sizeof(T) > buf_.size())
      throw FormatError("truncated file '" + path_ + "'", offset_);
    T v;
    std::memcpy(&v, buf_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return v;
  }

  void get_bytes(void* p, std::size_t n) {
    if (offset_ + n > buf_.size())
      throw FormatError("truncated file '" + path_ + "'", offset_);
    std::memcpy(p, buf_.data() + offset_, n);
    offset_ += n;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    if (offset_ + n > buf_.size())
      throw FormatError("truncated string in '" + path_ + "'", offset_);
    std::string s(reinterpret_cast<const char*>(buf_.data() + offset_), n);
    offset_ += n;
    return s;
  }

  void seek(std::uint64_t off) {
    if (off > buf_.size())
      throw FormatError("seek past end of '" + path_ + "'", off);
    offset_ = off;
  }

  std::uint64_t offset() const { return offset_; }
  std::uint64_t size() const { return buf_.size(); }
  bool exhausted() const { return offset_ == buf_.size(); }
  const std::vector<std::uint8_t>& bytes() const { return buf_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::vector<std::uint8_t> buf_;
  std::uint64_t offset_ = 0;
};

// CRC32 (IEEE, reflected); guards header bytes in the dataset container.
inline std::uint32_t crc32(const void* data, std::size_t n,
                           std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  const auto* p = static_cast<const std::uint8_t*>(data);
  crc = ~crc;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
  return ~crc;
}

}  // namespace vdpg
