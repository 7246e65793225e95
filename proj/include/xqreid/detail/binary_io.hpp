#pragma once

// Little-endian primitive readers/writers shared by the feature, model and
// score-matrix file formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "xqreid/error.hpp"

namespace xqreid::detail {

template <typename T>
  requires std::is_arithmetic_v<T>
void write_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Sequential reader that reports the byte offset of any short read.
class LeReader {
 public:
  LeReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T read() {
    std::array<char, sizeof(T)> bytes{};
    read_bytes(bytes.data(), bytes.size());
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
  }

  std::string read_string(std::size_t length) {
    std::string s(length, '\0');
    read_bytes(s.data(), length);
    return s;
  }

  void expect_magic(const char (&magic)[5]) {
    char got[4];
    read_bytes(got, 4);
    if (std::memcmp(got, magic, 4) != 0)
      fail(ErrorCode::FormatError, source_ + ": bad magic at offset 0");
  }

  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof())
      fail(ErrorCode::FormatError,
           source_ + ": trailing bytes after offset " + std::to_string(offset_));
  }

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  void read_bytes(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      fail(ErrorCode::FormatError,
           source_ + ": truncated at offset " + std::to_string(offset_ + in_.gcount()));
    offset_ += n;
  }

  std::istream& in_;
  std::string source_;
  std::uint64_t offset_ = 0;
};

inline void write_label(std::ostream& out, const std::string& label) {
  require(label.size() <= 0xFFFF, ErrorCode::FormatError,
          "label longer than 65535 bytes: " + label.substr(0, 32));
  write_le<std::uint16_t>(out, static_cast<std::uint16_t>(label.size()));
  out.write(label.data(), static_cast<std::streamsize>(label.size()));
}

inline std::string read_label(LeReader& reader) {
  const auto length = reader.read<std::uint16_t>();
  return reader.read_string(length);
}

}  // namespace xqreid::detail
