#include "cmbac/nn/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cmbac/common/errors.hpp"

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace cmbac::nn {

namespace {
constexpr char kSnapshotMagic[4] = {'C', 'M', 'B', 'T'};
constexpr std::uint32_t kSnapshotVersion = 1;
}  // namespace

void BinaryWriter::u32(std::uint32_t v) { buf_.append(reinterpret_cast<const char*>(&v), sizeof v); }
void BinaryWriter::u64(std::uint64_t v) { buf_.append(reinterpret_cast<const char*>(&v), sizeof v); }
void BinaryWriter::f64(double v) { buf_.append(reinterpret_cast<const char*>(&v), sizeof v); }
void BinaryWriter::bytes(std::string_view b) { buf_.append(b); }

void BinaryWriter::str(std::string_view s) {
  u64(s.size());
  buf_.append(s);
}

void BinaryWriter::tensor(const Tensor& t) {
  u64(static_cast<std::uint64_t>(t.rows()));
  u64(static_cast<std::uint64_t>(t.cols()));
  buf_.append(reinterpret_cast<const char*>(t.data()), sizeof(double) * static_cast<std::size_t>(t.size()));
}

void BinaryWriter::f64s(std::span<const double> xs) {
  u64(xs.size());
  buf_.append(reinterpret_cast<const char*>(xs.data()), sizeof(double) * xs.size());
}

std::string_view BinaryReader::bytes(std::size_t n) {
  if (n > remaining()) throw SerializationError("unexpected end of data");
  auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  std::memcpy(&v, bytes(sizeof v).data(), sizeof v);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  std::memcpy(&v, bytes(sizeof v).data(), sizeof v);
  return v;
}

double BinaryReader::f64() {
  double v;
  std::memcpy(&v, bytes(sizeof v).data(), sizeof v);
  return v;
}

bool BinaryReader::boolean() {
  const auto v = u32();
  if (v > 1) throw SerializationError("invalid boolean");
  return v == 1;
}

std::size_t BinaryReader::count(std::size_t min_bytes_per_item) {
  const std::uint64_t n = u64();
  if (min_bytes_per_item > 0 && n > remaining() / min_bytes_per_item) {
    throw SerializationError("count field exceeds remaining data");
  }
  return static_cast<std::size_t>(n);
}

std::string BinaryReader::str() {
  const std::size_t n = count(1);
  return std::string(bytes(n));
}

Tensor BinaryReader::tensor() {
  const std::uint64_t rows = u64();
  const std::uint64_t cols = u64();
  if (rows != 0 && cols > remaining() / sizeof(double) / rows) {
    throw SerializationError("tensor size exceeds remaining data");
  }
  Tensor t(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  auto raw = bytes(sizeof(double) * rows * cols);
  std::memcpy(t.data(), raw.data(), raw.size());
  return t;
}

std::vector<double> BinaryReader::f64s() {
  const std::size_t n = count(sizeof(double));
  std::vector<double> out(n);
  auto raw = bytes(sizeof(double) * n);
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

std::string encode_snapshot(std::span<const Tensor* const> tensors) {
  BinaryWriter w;
  w.bytes(std::string_view(kSnapshotMagic, 4));
  w.u32(kSnapshotVersion);
  w.u64(tensors.size());
  for (const Tensor* t : tensors) {
    w.u64(static_cast<std::uint64_t>(t->rows()));
    w.u64(static_cast<std::uint64_t>(t->cols()));
  }
  for (const Tensor* t : tensors) {
    w.bytes(std::string_view(reinterpret_cast<const char*>(t->data()), sizeof(double) * static_cast<std::size_t>(t->size())));
  }
  return w.take();
}

std::string encode_snapshot(std::span<const Parameter* const> params) {
  std::vector<const Tensor*> ts;
  ts.reserve(params.size());
  for (const Parameter* p : params) ts.push_back(&p->value);
  return encode_snapshot(std::span<const Tensor* const>(ts));
}

std::vector<Tensor> decode_snapshot(std::string_view bytes) {
  BinaryReader r(bytes);
  if (r.bytes(4) != std::string_view(kSnapshotMagic, 4)) throw SerializationError("snapshot: bad magic");
  if (r.u32() != kSnapshotVersion) throw SerializationError("snapshot: unsupported version");
  const std::size_t n = r.count(16);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> shapes(n);
  std::uint64_t total = 0;
  for (auto& [rows, cols] : shapes) {
    rows = r.u64();
    cols = r.u64();
    if (rows != 0 && cols > r.remaining() / sizeof(double) / rows) throw SerializationError("snapshot: bad shape");
    total += rows * cols;
  }
  if (total * sizeof(double) != r.remaining()) throw SerializationError("snapshot: payload size mismatch");
  std::vector<Tensor> out;
  out.reserve(n);
  for (auto [rows, cols] : shapes) {
    Tensor t(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    auto raw = r.bytes(sizeof(double) * rows * cols);
    std::memcpy(t.data(), raw.data(), raw.size());
    out.push_back(std::move(t));
  }
  return out;
}

void load_snapshot(std::string_view bytes, std::span<Parameter* const> params) {
  auto tensors = decode_snapshot(bytes);
  if (tensors.size() != params.size()) throw SerializationError("snapshot: tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (tensors[i].rows() != params[i]->value.rows() || tensors[i].cols() != params[i]->value.cols()) {
      throw SerializationError("snapshot: shape mismatch at tensor " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->value = std::move(tensors[i]);
    params[i]->zero_grad();
  }
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw SerializationError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw SerializationError("write to '" + path + "' failed");
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw SerializationError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace cmbac::nn
