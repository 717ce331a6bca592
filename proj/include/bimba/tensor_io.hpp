// Binary tensor file format.
//
//   magic   "BMBT"            4 bytes
//   version 0x01              1 byte
//   dtype   1 = f64, 2 = f32  1 byte
//   rank                      1 byte (grids are rank 4: T, h, w, d)
//   dims    rank u64, little-endian
//   payload elements, little-endian, (t, y, x) lexicographic, channels last
//
// f64 files round-trip bit-exactly. f32 files are a lossy narrowing on
// write and widen exactly on read.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "bimba/grid.hpp"

namespace bimba {

enum class TensorDtype : std::uint8_t { f64 = 1, f32 = 2 };

class tensor_format_error : public std::runtime_error {
 public:
  enum class Kind {
    io,            // file unreadable / unwritable
    bad_magic,     // leading bytes are not "BMBT"
    bad_version,   // version byte != 1
    bad_dtype,     // dtype code is neither f64 nor f32
    bad_rank,      // rank != 4 or a zero dimension
    payload_size,  // payload truncated or oversized for the declared dims
    bad_value,     // non-finite element in the payload
  };

  tensor_format_error(Kind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

void write_tensor(const TokenGrid& grid, const std::string& path,
                  TensorDtype dtype = TensorDtype::f64);

TokenGrid read_tensor(const std::string& path);

// Header probe: shape and dtype without loading the payload.
struct TensorInfo {
  TensorDtype dtype = TensorDtype::f64;
  std::size_t frames = 0, height = 0, width = 0, channels = 0;
};
TensorInfo read_tensor_info(const std::string& path);

}  // namespace bimba
