// Transient-buffer accounting. Kernels report the size of each working
// buffer they allocate; the meter keeps the largest. Peak memory is defined
// by this accounting, not by OS RSS, so the numbers are exact and
// reproducible (the self-attention score matrix reports L'^2 * sizeof(elem)
// bytes, and that is what the capacity budget is checked against).
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bimba {

struct BufferMeter {
  std::size_t peak_bytes = 0;
  void note(std::size_t bytes) {
    if (bytes > peak_bytes) peak_bytes = bytes;
  }
};

inline void note_buffer(BufferMeter* meter, std::size_t bytes) {
  if (meter) meter->note(bytes);
}

// Thrown when a kernel cannot (or must not) allocate its working set.
class capacity_error : public std::runtime_error {
 public:
  explicit capacity_error(std::size_t requested)
      : std::runtime_error("capacity: working buffer of " +
                           std::to_string(requested) + " bytes unavailable"),
        requested_(requested) {}
  std::size_t requested_bytes() const { return requested_; }

 private:
  std::size_t requested_;
};

}  // namespace bimba
