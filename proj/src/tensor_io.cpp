#include "bimba/tensor_io.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace bimba {
namespace {

constexpr char kMagic[4] = {'B', 'M', 'B', 'T'};
constexpr std::uint8_t kVersion = 1;

void put_u64le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

// Payload scalars are serialized through their bit patterns so the files do
// not depend on host FP quirks; x86-64 is little-endian already but we keep
// the byte order explicit.
void put_f64le(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64le(out, bits);
}

void put_f32le(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_f64le(const unsigned char* p) {
  const std::uint64_t bits = get_u64le(p);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

float get_f32le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

[[noreturn]] void fail(tensor_format_error::Kind kind, const std::string& msg) {
  throw tensor_format_error(kind, msg);
}

struct Header {
  TensorDtype dtype;
  std::uint64_t dims[4];
  std::size_t header_bytes;
};

Header parse_header(const std::string& path, const std::vector<unsigned char>& bytes) {
  using Kind = tensor_format_error::Kind;
  if (bytes.size() < 7) fail(Kind::bad_magic, path + ": file too short for header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(Kind::bad_magic, path + ": bad magic (not a BMBT tensor)");
  if (bytes[4] != kVersion)
    fail(Kind::bad_version, path + ": unsupported format version " +
                                std::to_string(static_cast<int>(bytes[4])));
  const std::uint8_t dtype_code = bytes[5];
  if (dtype_code != 1 && dtype_code != 2)
    fail(Kind::bad_dtype, path + ": unknown dtype code " +
                              std::to_string(static_cast<int>(dtype_code)));
  const std::uint8_t rank = bytes[6];
  if (rank != 4)
    fail(Kind::bad_rank,
         path + ": rank " + std::to_string(static_cast<int>(rank)) +
             ", expected 4 (frames, height, width, channels)");
  Header h;
  h.dtype = static_cast<TensorDtype>(dtype_code);
  h.header_bytes = 7 + 8 * static_cast<std::size_t>(rank);
  if (bytes.size() < h.header_bytes)
    fail(Kind::payload_size, path + ": truncated dimension table");
  for (int i = 0; i < 4; ++i) {
    h.dims[i] = get_u64le(bytes.data() + 7 + 8 * i);
    if (h.dims[i] == 0) fail(Kind::bad_rank, path + ": zero dimension");
  }
  return h;
}

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(tensor_format_error::Kind::io, path + ": cannot open for reading");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

void write_tensor(const TokenGrid& grid, const std::string& path, TensorDtype dtype) {
  validate_grid(grid, "write_tensor");
  std::string out;
  const std::size_t elem = dtype == TensorDtype::f64 ? 8 : 4;
  out.reserve(7 + 32 + grid.data.size() * elem);
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  out.push_back(static_cast<char>(dtype));
  out.push_back(4);
  for (std::size_t dim : {grid.frames, grid.height, grid.width, grid.channels})
    put_u64le(out, dim);
  if (dtype == TensorDtype::f64) {
    for (double v : grid.data) put_f64le(out, v);
  } else {
    for (double v : grid.data) put_f32le(out, static_cast<float>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(tensor_format_error::Kind::io, path + ": cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) fail(tensor_format_error::Kind::io, path + ": write failed");
}

TokenGrid read_tensor(const std::string& path) {
  using Kind = tensor_format_error::Kind;
  const std::vector<unsigned char> bytes = slurp(path);
  const Header h = parse_header(path, bytes);

  const std::size_t elem = h.dtype == TensorDtype::f64 ? 8 : 4;
  std::size_t count = 1;
  for (int i = 0; i < 4; ++i) {
    if (h.dims[i] > std::numeric_limits<std::size_t>::max() / count)
      fail(Kind::bad_rank, path + ": dimension overflow");
    count *= static_cast<std::size_t>(h.dims[i]);
  }
  const std::size_t expected = h.header_bytes + count * elem;
  if (bytes.size() < expected)
    fail(Kind::payload_size, path + ": truncated payload (" +
                                 std::to_string(bytes.size() - h.header_bytes) +
                                 " of " + std::to_string(count * elem) + " bytes)");
  if (bytes.size() > expected)
    fail(Kind::payload_size, path + ": payload larger than declared dims");

  TokenGrid grid(h.dims[0], h.dims[1], h.dims[2], h.dims[3]);
  const unsigned char* p = bytes.data() + h.header_bytes;
  if (h.dtype == TensorDtype::f64) {
    for (std::size_t i = 0; i < count; ++i, p += 8) grid.data[i] = get_f64le(p);
  } else {
    for (std::size_t i = 0; i < count; ++i, p += 4)
      grid.data[i] = static_cast<double>(get_f32le(p));
  }
  for (double v : grid.data)
    if (!std::isfinite(v)) fail(Kind::bad_value, path + ": non-finite element");
  return grid;
}

TensorInfo read_tensor_info(const std::string& path) {
  const std::vector<unsigned char> bytes = slurp(path);
  const Header h = parse_header(path, bytes);
  TensorInfo info;
  info.dtype = h.dtype;
  info.frames = h.dims[0];
  info.height = h.dims[1];
  info.width = h.dims[2];
  info.channels = h.dims[3];
  return info;
}

}  // namespace bimba
