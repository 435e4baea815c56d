#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmbac/nn/tape.hpp"

namespace cmbac::nn {

/// Little-endian binary encoder backing parameter snapshots and checkpoints.
class BinaryWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v);
  void boolean(bool v) { u32(v ? 1U : 0U); }
  void bytes(std::string_view b);
  void str(std::string_view s);
  void tensor(const Tensor& t);
  void f64s(std::span<const double> xs);

  const std::string& buffer() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

/// Bounds-checked decoder; every read past the end throws SerializationError.
class BinaryReader {
 public:
  explicit BinaryReader(std::string_view data) : data_(data) {}

  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64();
  bool boolean();
  std::string_view bytes(std::size_t n);
  std::string str();
  Tensor tensor();
  std::vector<double> f64s();

  // Size of a count field, rejecting anything larger than the remaining bytes
  // could possibly hold.
  std::size_t count(std::size_t min_bytes_per_item);

  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

/// Flat parameter snapshot:
///
///   "CMBT" | u32 version | u64 n | n x (u64 rows, u64 cols) | row-major f64 data
///
/// All integers and doubles little-endian.
std::string encode_snapshot(std::span<const Parameter* const> params);
std::string encode_snapshot(std::span<const Tensor* const> tensors);
std::vector<Tensor> decode_snapshot(std::string_view bytes);

// Copies decoded values into `params`; shapes must match exactly.
void load_snapshot(std::string_view bytes, std::span<Parameter* const> params);

void write_file(const std::string& path, std::string_view bytes);
std::string read_file(const std::string& path);

}  // namespace cmbac::nn
