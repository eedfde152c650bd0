#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace mvt::io {

/// Appends little-endian fields to an in-memory buffer.
class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  /// u32 length followed by the raw characters.
  void str(std::string_view s);

  const std::string& buffer() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

/// Bounds-checked little-endian reader; running past the end is a FormatError.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string context) : data_(data), context_(std::move(context)) {}

  std::string_view bytes(std::size_t n);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::string context_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32(std::string_view data);

/// Appends a CRC-32 of everything written so far.
void seal(ByteWriter& w);

/// Verifies and strips the trailing CRC-32; throws FormatError on mismatch.
std::string_view unseal(std::string_view data, const std::string& context);

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and rename, so readers never see partial files.
void write_file(const std::filesystem::path& path, std::string_view data);

}  // namespace mvt::io
