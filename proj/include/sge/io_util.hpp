#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sge {

// CRC-32 (IEEE 802.3 polynomial, reflected), incremental.
std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed = 0);

// FNV-1a 64-bit, used for parameter checksums and seed derivation.
std::uint64_t fnv1a64(const void* data, std::size_t len,
                      std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64(const std::string& s,
                      std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// Little-endian byte buffer writer/reader for binary file formats.
class ByteWriter {
 public:
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void bytes(const void* data, std::size_t len);
  void str(const std::string& s);  // u32 length prefix + bytes
  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
};

class io_error : public std::runtime_error {
 public:
  enum class kind { bad_magic, bad_version, truncated, bad_checksum, bad_content, mismatch };
  io_error(kind k, const std::string& msg) : std::runtime_error(msg), kind_(k) {}
  kind error_kind() const { return kind_; }

 private:
  kind kind_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t len) : data_(data), len_(len) {}
  explicit ByteReader(const std::vector<std::uint8_t>& buf)
      : ByteReader(buf.data(), buf.size()) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  double f64();
  void bytes(void* out, std::size_t len);
  std::string str();
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return len_ - pos_; }

 private:
  void need(std::size_t n);
  const std::uint8_t* data_;
  std::size_t len_;
  std::size_t pos_ = 0;
};

// Whole-file IO. write_file_atomic writes to a temp file in the same
// directory and renames it into place.
std::vector<std::uint8_t> read_file(const std::string& path);
void write_file_atomic(const std::string& path, const void* data, std::size_t len);
void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& buf);
void write_text_atomic(const std::string& path, const std::string& text);

// Deterministic RNG: std::mt19937_64 outputs (the engine is fully specified
// by the standard) with hand-rolled transforms, so streams do not depend on
// the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next_u64() { return engine_(); }
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive
  double normal();                         // standard normal, Box-Muller

 private:
  std::mt19937_64 engine_;
};

}  // namespace sge
