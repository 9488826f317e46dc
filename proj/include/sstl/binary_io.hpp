#pragma once

// Little-endian primitives shared by every on-disk model format.

#include "sstl/common.hpp"

#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

namespace sstl::io {

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void magic(std::string_view tag);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void str(std::string_view s);
  // Row-major dump without a header.
  void matrix_body(const Matrix& m);
  void vector_body(const Vector& v);

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  // Throws DataError if the next bytes differ from `tag`.
  void expect_magic(std::string_view tag);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  double f64();
  std::string str();
  Matrix matrix_body(Index rows, Index cols);
  Vector vector_body(Index n);

  // Throws unless the stream is exhausted.
  void expect_eof();

 private:
  void read_exact(char* dst, std::size_t n, const char* what);

  std::istream& in_;
  std::string source_;
  std::uint64_t offset_ = 0;
};

}  // namespace sstl::io
