// Compression baselines the selector is measured against.
//
//   vanilla    -- no compression, tokens passed through in flatten order
//   pooling    -- adaptive 3D average pooling alone (the selector's init)
//   perceiver  -- M learned latents cross-attend once over all video tokens
//   attention  -- full softmax self-attention over [video; queries], queries
//                 extracted; materializes the L'xL' score matrix on purpose
//                 (the quadratic cost being demonstrated)
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "bimba/grid.hpp"
#include "bimba/meter.hpp"
#include "bimba/rng.hpp"
#include "bimba/selector.hpp"

namespace bimba {

template <class Real>
struct AttentionParamsT {
  std::size_t dim = 0;           // d
  std::size_t latent_count = 0;  // M, perceiver only
  std::vector<Real> wq, wk, wv, wo;  // d*d each, row-major (in, out)
  std::vector<Real> latents;         // M*d
};

using AttentionParams = AttentionParamsT<double>;

template <class Real>
AttentionParamsT<Real> init_attention_params(std::size_t dim, std::size_t latent_count,
                                             std::uint64_t seed) {
  if (dim == 0) throw std::invalid_argument("attention params: zero dim");
  AttentionParamsT<Real> p;
  p.dim = dim;
  p.latent_count = latent_count;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  Rng rng(seed);
  auto fill = [&](std::vector<Real>& w, std::size_t n, double s) {
    w.resize(n);
    for (Real& v : w) v = static_cast<Real>(rng.normal() * s);
  };
  fill(p.wq, dim * dim, scale);
  fill(p.wk, dim * dim, scale);
  fill(p.wv, dim * dim, scale);
  fill(p.wo, dim * dim, scale);
  fill(p.latents, latent_count * dim, 1.0);
  return p;
}

template <class Real>
void validate_attention_params(const AttentionParamsT<Real>& p) {
  const std::size_t d = p.dim;
  if (d == 0) throw std::invalid_argument("attention params: zero dim");
  if (p.wq.size() != d * d || p.wk.size() != d * d || p.wv.size() != d * d ||
      p.wo.size() != d * d)
    throw std::invalid_argument("attention params: projection size mismatch");
  if (p.latents.size() != p.latent_count * d)
    throw std::invalid_argument("attention params: latent size mismatch");
}

// out[j] = row . w  for a d x d row-major projection.
template <class Real>
void project_row(const Real* row, const std::vector<Real>& w, std::size_t d, Real* out) {
  for (std::size_t j = 0; j < d; ++j) out[j] = Real(0);
  for (std::size_t i = 0; i < d; ++i) {
    const Real v = row[i];
    const Real* wr = w.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) out[j] += v * wr[j];
  }
}

// In-place softmax with max subtraction; rows sum to 1 within accumulated
// rounding (<= 1e-12 at the sizes used here).
template <class Real>
void softmax_row(Real* row, std::size_t n) {
  if (n == 0) throw std::invalid_argument("softmax_row: empty row");
  Real mx = row[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
  Real sum = Real(0);
  for (std::size_t i = 0; i < n; ++i) {
    row[i] = std::exp(row[i] - mx);
    sum += row[i];
  }
  const Real inv = Real(1) / sum;
  for (std::size_t i = 0; i < n; ++i) row[i] *= inv;
}

// ---------------------------------------------------------------------------
// vanilla: flatten order, values untouched.
template <class Real>
SequenceT<Real> vanilla_pass(const GridT<Real>& z, BufferMeter* meter = nullptr) {
  validate_grid(z, "vanilla_pass");
  note_buffer(meter, z.data.size() * sizeof(Real));
  return flatten(z);
}

// pooling: shares the selector's query-initialization kernel by design.
template <class Real>
GridT<Real> pool_compress(const GridT<Real>& z, std::size_t t_out, std::size_t h_out,
                          std::size_t w_out, BufferMeter* meter = nullptr) {
  return adaptive_pool3d(z, t_out, h_out, w_out, meter);
}

// ---------------------------------------------------------------------------
// perceiver: one cross-attention layer. Each latent builds a softmax over
// all L video tokens, so each output row is a convex combination of the
// token value projections, mapped through the output projection. Scores are
// computed one latent row at a time: the working set stays O(L).
template <class Real>
SequenceT<Real> perceiver_compress(const GridT<Real>& z, const AttentionParamsT<Real>& p,
                                   BufferMeter* meter = nullptr) {
  validate_grid(z, "perceiver_compress");
  validate_attention_params(p);
  if (p.dim != z.channels)
    throw std::invalid_argument("perceiver_compress: channel mismatch");
  if (p.latent_count == 0)
    throw std::invalid_argument("perceiver_compress: no latents");

  const std::size_t L = z.token_count(), d = z.channels, m = p.latent_count;
  const Real inv_sqrt_d = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d)));

  std::vector<Real> keys(L * d), values(L * d);
  note_buffer(meter, L * d * sizeof(Real));  // keys (values match)
  for (std::size_t j = 0; j < L; ++j) {
    project_row(z.token(j), p.wk, d, keys.data() + j * d);
    project_row(z.token(j), p.wv, d, values.data() + j * d);
  }

  SequenceT<Real> out(m, d);
  std::vector<Real> q(d), scores(L), mixed(d);
  note_buffer(meter, L * sizeof(Real));  // one score row
  for (std::size_t i = 0; i < m; ++i) {
    project_row(p.latents.data() + i * d, p.wq, d, q.data());
    for (std::size_t j = 0; j < L; ++j) {
      Real dot = Real(0);
      const Real* kj = keys.data() + j * d;
      for (std::size_t c = 0; c < d; ++c) dot += q[c] * kj[c];
      scores[j] = dot * inv_sqrt_d;
    }
    softmax_row(scores.data(), L);
    for (std::size_t c = 0; c < d; ++c) mixed[c] = Real(0);
    for (std::size_t j = 0; j < L; ++j) {
      const Real w = scores[j];
      const Real* vj = values.data() + j * d;
      for (std::size_t c = 0; c < d; ++c) mixed[c] += w * vj[c];
    }
    project_row(mixed.data(), p.wo, d, out[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// attention: full self-attention over [flatten(Z); flatten(Q)] with the
// dense L'xL' score matrix, then extraction of the N query positions.
// Reported peak bytes are exactly L'*L'*sizeof(Real); an unallocatable
// score matrix surfaces as capacity_error rather than OOM.
template <class Real>
std::size_t attention_score_bytes(std::size_t combined_len) {
  return combined_len * combined_len * sizeof(Real);
}

template <class Real>
SequenceT<Real> attention_compress(const GridT<Real>& z, const GridT<Real>& q,
                                   const AttentionParamsT<Real>& p,
                                   BufferMeter* meter = nullptr) {
  validate_grid(z, "attention_compress");
  validate_grid(q, "attention_compress queries");
  validate_attention_params(p);
  if (z.channels != q.channels || p.dim != z.channels)
    throw std::invalid_argument("attention_compress: channel mismatch");

  const std::size_t L = z.token_count(), N = q.token_count(), d = z.channels;
  const std::size_t combined = L + N;
  const Real inv_sqrt_d = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d)));

  std::vector<Real> qs(combined * d), ks(combined * d), vs(combined * d);
  note_buffer(meter, combined * d * sizeof(Real));
  auto token_at = [&](std::size_t i) {
    return i < L ? z.token(i) : q.token(i - L);
  };
  for (std::size_t i = 0; i < combined; ++i) {
    project_row(token_at(i), p.wq, d, qs.data() + i * d);
    project_row(token_at(i), p.wk, d, ks.data() + i * d);
    project_row(token_at(i), p.wv, d, vs.data() + i * d);
  }

  const std::size_t score_bytes = attention_score_bytes<Real>(combined);
  note_buffer(meter, score_bytes);
  std::vector<Real> scores;
  try {
    scores.resize(combined * combined);
  } catch (const std::bad_alloc&) {
    throw capacity_error(score_bytes);
  }
  for (std::size_t i = 0; i < combined; ++i) {
    Real* row = scores.data() + i * combined;
    const Real* qi = qs.data() + i * d;
    for (std::size_t j = 0; j < combined; ++j) {
      Real dot = Real(0);
      const Real* kj = ks.data() + j * d;
      for (std::size_t c = 0; c < d; ++c) dot += qi[c] * kj[c];
      row[j] = dot * inv_sqrt_d;
    }
    softmax_row(row, combined);
  }

  SequenceT<Real> out(N, d);
  std::vector<Real> mixed(d);
  for (std::size_t i = 0; i < N; ++i) {
    const Real* row = scores.data() + (L + i) * combined;
    for (std::size_t c = 0; c < d; ++c) mixed[c] = Real(0);
    for (std::size_t j = 0; j < combined; ++j) {
      const Real w = row[j];
      const Real* vj = vs.data() + j * d;
      for (std::size_t c = 0; c < d; ++c) mixed[c] += w * vj[c];
    }
    project_row(mixed.data(), p.wo, d, out[i]);
  }
  return out;
}

}  // namespace bimba
