// Dense (T, h, w, d) token grids and flat (L, d) token sequences.
//
// Storage order is the contract everything else builds on: tokens are laid
// out temporal-major, (t, y, x) lexicographic, with the d channels of one
// token contiguous. Flattening a grid is therefore a relabeling, and
// flatten/unflatten round-trip bit-exactly.
#pragma once

#include <cstddef>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace bimba {

template <class Real>
struct GridT {
  std::size_t frames = 0;    // T
  std::size_t height = 0;    // h
  std::size_t width = 0;     // w
  std::size_t channels = 0;  // d
  std::vector<Real> data;    // ((t*h + y)*w + x)*d + c

  GridT() = default;

  GridT(std::size_t t, std::size_t h, std::size_t w, std::size_t d)
      : frames(t), height(h), width(w), channels(d) {
    if (t == 0 || h == 0 || w == 0 || d == 0)
      throw std::invalid_argument("grid: all dimensions must be positive");
    const std::size_t limit = std::numeric_limits<std::size_t>::max();
    std::size_t n = t;
    for (std::size_t m : {h, w, d}) {
      if (n > limit / m) throw std::invalid_argument("grid: size overflow");
      n *= m;
    }
    data.assign(n, Real(0));
  }

  std::size_t token_count() const { return frames * height * width; }
  std::size_t value_count() const { return token_count() * channels; }

  std::size_t token_index(std::size_t t, std::size_t y, std::size_t x) const {
    return (t * height + y) * width + x;
  }

  Real& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) {
    return data[token_index(t, y, x) * channels + c];
  }
  Real at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
    return data[token_index(t, y, x) * channels + c];
  }

  Real* token(std::size_t k) { return data.data() + k * channels; }
  const Real* token(std::size_t k) const { return data.data() + k * channels; }
};

// A flat run of `len` tokens, d channels each, same channel-contiguous layout.
template <class Real>
struct SequenceT {
  std::size_t len = 0;
  std::size_t dim = 0;
  std::vector<Real> data;

  SequenceT() = default;
  SequenceT(std::size_t l, std::size_t d) : len(l), dim(d), data(l * d, Real(0)) {}

  Real* operator[](std::size_t k) { return data.data() + k * dim; }
  const Real* operator[](std::size_t k) const { return data.data() + k * dim; }
};

using TokenGrid = GridT<double>;
using QueryGrid = GridT<double>;  // same layout; the short, pooled-side grid
using Sequence = SequenceT<double>;

// Inverse of GridT::token_index for a given grid shape.
struct GridPosition {
  std::size_t t = 0, y = 0, x = 0;
};

template <class Real>
GridPosition grid_position(const GridT<Real>& g, std::size_t k) {
  GridPosition p;
  p.x = k % g.width;
  k /= g.width;
  p.y = k % g.height;
  p.t = k / g.height;
  return p;
}

template <class Real>
void validate_grid(const GridT<Real>& g, const char* what = "grid") {
  if (g.frames == 0 || g.height == 0 || g.width == 0 || g.channels == 0)
    throw std::invalid_argument(std::string(what) + ": empty dimension");
  if (g.data.size() != g.value_count())
    throw std::invalid_argument(std::string(what) + ": storage size mismatch");
  for (const Real v : g.data)
    if (!std::isfinite(static_cast<double>(v)))
      throw std::invalid_argument(std::string(what) + ": non-finite element");
}

// Copies the grid into sequence form; order is the storage order, so the
// token at flat index k is the (t, y, x) with k = (t*h + y)*w + x.
template <class Real>
SequenceT<Real> flatten(const GridT<Real>& g) {
  SequenceT<Real> s(g.token_count(), g.channels);
  s.data = g.data;
  return s;
}

template <class Real>
GridT<Real> unflatten(const SequenceT<Real>& s, std::size_t t, std::size_t h,
                      std::size_t w) {
  if (s.len != t * h * w)
    throw std::invalid_argument("unflatten: length does not match t*h*w");
  if (s.dim == 0) throw std::invalid_argument("unflatten: zero channels");
  GridT<Real> g(t, h, w, s.dim);
  g.data = s.data;
  return g;
}

// Largest elementwise deviation |a - b| scaled by the reference magnitude.
// This is the metric used by the oracle-equivalence and symmetry checks.
template <class Real>
double max_relative_deviation(const SequenceT<Real>& a, const SequenceT<Real>& b) {
  if (a.len != b.len || a.dim != b.dim)
    throw std::invalid_argument("max_relative_deviation: shape mismatch");
  double scale = 0.0;
  for (const Real v : b.data) scale = std::max(scale, std::fabs(static_cast<double>(v)));
  if (scale == 0.0) scale = 1.0;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = std::fabs(static_cast<double>(a.data[i]) -
                               static_cast<double>(b.data[i]));
    worst = std::max(worst, d / scale);
  }
  return worst;
}

}  // namespace bimba
