#include "sstl/binary_io.hpp"

#include <bit>
#include <limits>

namespace sstl::io {

void BinaryWriter::magic(std::string_view tag) { out_.write(tag.data(), static_cast<std::streamsize>(tag.size())); }

void BinaryWriter::u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }

void BinaryWriter::u32(std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out_.write(b.data(), 4);
}

void BinaryWriter::u64(std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out_.write(b.data(), 8);
}

void BinaryWriter::i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }

void BinaryWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryWriter::matrix_body(const Matrix& m) {
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) f64(m(r, c));
}

void BinaryWriter::vector_body(const Vector& v) {
  for (Index i = 0; i < v.size(); ++i) f64(v(i));
}

void BinaryReader::read_exact(char* dst, std::size_t n, const char* what) {
  in_.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) {
    throw DataError(source_ + ": truncated file while reading " + what + " at byte offset " +
                    std::to_string(offset_));
  }
  offset_ += n;
}

void BinaryReader::expect_magic(std::string_view tag) {
  std::string got(tag.size(), '\0');
  read_exact(got.data(), got.size(), "magic");
  if (got != tag) {
    throw DataError(source_ + ": bad magic, expected \"" + std::string(tag) + "\"");
  }
}

std::uint8_t BinaryReader::u8() {
  char c = 0;
  read_exact(&c, 1, "u8");
  return static_cast<std::uint8_t>(c);
}

std::uint32_t BinaryReader::u32() {
  std::array<unsigned char, 4> b{};
  read_exact(reinterpret_cast<char*>(b.data()), 4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::array<unsigned char, 8> b{};
  read_exact(reinterpret_cast<char*>(b.data()), 8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::int64_t BinaryReader::i64() { return static_cast<std::int64_t>(u64()); }

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::string BinaryReader::str() {
  const std::uint32_t n = u32();
  std::string s(n, '\0');
  read_exact(s.data(), n, "string");
  return s;
}

Matrix BinaryReader::matrix_body(Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      std::array<unsigned char, 8> b{};
      in_.read(reinterpret_cast<char*>(b.data()), 8);
      if (in_.gcount() != 8) {
        throw DataError(source_ + ": truncated file at row " + std::to_string(r) + ", column " +
                        std::to_string(c));
      }
      offset_ += 8;
      std::uint64_t v = 0;
      for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
      m(r, c) = std::bit_cast<double>(v);
    }
  }
  return m;
}

Vector BinaryReader::vector_body(Index n) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = f64();
  return v;
}

void BinaryReader::expect_eof() {
  if (in_.peek() != std::char_traits<char>::eof()) {
    throw DataError(source_ + ": trailing bytes after offset " + std::to_string(offset_));
  }
}

}  // namespace sstl::io
