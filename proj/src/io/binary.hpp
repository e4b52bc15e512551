#pragma once

// Little-endian framed files: magic | u32 version | u64 total bytes | payload | u32 CRC-32.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include <zlib.h>

#include "cflow/checkpoint.hpp"

namespace cflow::binary {

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

class Writer {
 public:
  Writer(std::string_view magic, std::uint32_t version) {
    out_.append(magic);
    u32(version);
    u64(0);
  }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  std::string finish() {
    const std::uint64_t total = out_.size() + 4;
    for (int i = 0; i < 8; ++i) out_[8 + i] = static_cast<char>((total >> (8 * i)) & 0xff);
    u32(crc32_of(out_));
    return std::move(out_);
  }

 private:
  std::string out_;
};

class Reader {
 public:
  /// Validates magic, length, checksum and version, in that order.
  Reader(std::string_view bytes, std::string_view magic, std::uint32_t version, const std::string& what)
      : bytes_(bytes), what_(what) {
    if (bytes.size() < magic.size() || bytes.substr(0, magic.size()) != magic) {
      throw FormatError(what_ + ": not a " + std::string(magic) + " file");
    }
    if (bytes.size() < 20) throw TruncatedFileError(what_ + ": file is truncated");
    pos_ = magic.size();
    const std::uint32_t stored_version = u32();
    const std::uint64_t total = u64();
    if (bytes.size() < total) {
      throw TruncatedFileError(what_ + ": file is truncated (" + std::to_string(bytes.size()) + " of " +
                               std::to_string(total) + " bytes)");
    }
    if (bytes.size() > total) throw FormatError(what_ + ": trailing bytes after the checksum");
    end_ = bytes.size() - 4;
    std::uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i) stored_crc |= std::uint32_t{static_cast<unsigned char>(bytes[end_ + i])} << (8 * i);
    if (crc32_of(bytes.substr(0, end_)) != stored_crc) throw ChecksumError(what_ + ": checksum mismatch");
    if (stored_version != version) {
      throw VersionError(what_ + ": format version " + std::to_string(stored_version) + ", expected " +
                         std::to_string(version));
    }
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(bytes_[pos_++])} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_++])} << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }

  /// A count of items of item_bytes each that must fit in the remaining payload.
  std::size_t count(std::size_t item_bytes) {
    const std::uint64_t n = u64();
    if (item_bytes > 0 && n > (end_ - pos_) / item_bytes) throw FormatError(what_ + ": count exceeds file size");
    return static_cast<std::size_t>(n);
  }

  std::size_t remaining() const { return end_ - pos_; }

  void finish() const {
    if (pos_ != end_) throw FormatError(what_ + ": unexpected bytes before the checksum");
  }

 private:
  void need(std::size_t n) const {
    const std::size_t limit = end_ == 0 ? bytes_.size() : end_;
    if (pos_ + n > limit) throw FormatError(what_ + ": record runs past the end of the payload");
  }

  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

}  // namespace cflow::binary
