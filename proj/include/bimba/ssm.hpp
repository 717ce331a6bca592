// Selective-scan (S6-style) state-space kernel.
//
// Continuous model per channel c with a diagonal state matrix:
//     h'(t) = a h(t) + b x(t),      y(t) = C h(t) + D x(t)
// discretized per token k with a token-dependent step dt_k:
//     abar = exp(dt * a)   (zero-order hold on the decay)
//     bbar = dt * b        (Euler rule on the input path)
//     h_k  = abar h_{k-1} + bbar x_k,   h_0 reads from a zero state
//     y_k  = C_k . h_k + d_skip * x_k
//
// Selectivity: dt_k, B_k and C_k are projections of the token itself, so the
// recurrence decides per token how much state to keep and what to read out.
//     B_k = w_b^T x_k,  C_k = w_c^T x_k          (one s-vector per token)
//     dt_k = softplus(w_delta . x_k + delta_bias) (> 0 by construction)
//
// Everything is templated on the scalar type; correctness contracts are
// stated for double, float exists for the benchmark lane.
#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bimba/grid.hpp"
#include "bimba/meter.hpp"
#include "bimba/rng.hpp"

namespace bimba {

template <class Real>
struct SsmParamsT {
  std::size_t channels = 0;    // d
  std::size_t state_size = 0;  // s, states per channel

  std::vector<Real> a_diag;      // d*s, strictly negative decay rates
  std::vector<Real> b_proj;      // d*s, token -> B_k projection (w_b)
  std::vector<Real> c_proj;      // d*s, token -> C_k projection (w_c)
  std::vector<Real> delta_proj;  // d,   token -> dt logit       (w_delta)
  Real delta_bias = Real(0);
  std::vector<Real> skip;        // d,   direct input path       (d_skip)
};

using SsmParams = SsmParamsT<double>;

// Token-dependent parameters after projection, before discretization.
template <class Real>
struct PerTokenParamsT {
  std::size_t len = 0;
  std::size_t state_size = 0;
  std::vector<Real> delta;  // len, all > 0
  std::vector<Real> b;      // len*s
  std::vector<Real> c;      // len*s
};

using PerTokenParams = PerTokenParamsT<double>;

template <class Real>
void validate_params(const SsmParamsT<Real>& p) {
  const std::size_t d = p.channels, s = p.state_size;
  if (d == 0 || s == 0)
    throw std::invalid_argument("ssm params: channels and state_size must be positive");
  if (p.a_diag.size() != d * s || p.b_proj.size() != d * s ||
      p.c_proj.size() != d * s || p.delta_proj.size() != d || p.skip.size() != d)
    throw std::invalid_argument("ssm params: field size mismatch");
  for (const Real a : p.a_diag)
    if (!(a < Real(0)))
      throw std::invalid_argument("ssm params: a_diag must be strictly negative");
}

template <class Real>
void check_scan_input(const SequenceT<Real>& x, const SsmParamsT<Real>& p) {
  validate_params(p);
  if (x.dim != p.channels)
    throw std::invalid_argument("scan: sequence dim does not match params channels");
  if (x.data.size() != x.len * x.dim)
    throw std::invalid_argument("scan: sequence storage mismatch");
  for (const Real v : x.data)
    if (!std::isfinite(static_cast<double>(v)))
      throw std::invalid_argument("scan: non-finite input");
}

inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double logistic(double z) {
  return z > 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// dt > 0 and a < 0 give 0 < abar < 1: each step is a contraction, which is
// why arbitrarily long scans stay bounded.
template <class Real>
std::pair<Real, Real> discretize(Real delta, Real a, Real b) {
  if (!(delta > Real(0)))
    throw std::invalid_argument("discretize: delta must be positive");
  if (!(a < Real(0)))
    throw std::invalid_argument("discretize: a must be negative");
  return {std::exp(delta * a), delta * b};
}

template <class Real>
PerTokenParamsT<Real> derive_params(const SequenceT<Real>& x, const SsmParamsT<Real>& p) {
  check_scan_input(x, p);
  const std::size_t L = x.len, d = p.channels, s = p.state_size;
  PerTokenParamsT<Real> out;
  out.len = L;
  out.state_size = s;
  out.delta.assign(L, Real(0));
  out.b.assign(L * s, Real(0));
  out.c.assign(L * s, Real(0));
  for (std::size_t k = 0; k < L; ++k) {
    const Real* xk = x[k];
    double logit = static_cast<double>(p.delta_bias);
    for (std::size_t c = 0; c < d; ++c)
      logit += static_cast<double>(p.delta_proj[c]) * static_cast<double>(xk[c]);
    out.delta[k] = static_cast<Real>(softplus(logit));
    Real* bk = out.b.data() + k * s;
    Real* ck = out.c.data() + k * s;
    for (std::size_t c = 0; c < d; ++c) {
      const Real xv = xk[c];
      const Real* wb = p.b_proj.data() + c * s;
      const Real* wc = p.c_proj.data() + c * s;
      for (std::size_t n = 0; n < s; ++n) {
        bk[n] += wb[n] * xv;
        ck[n] += wc[n] * xv;
      }
    }
  }
  return out;
}

// Reference evaluation: the recurrence written as directly as possible, one
// token at a time. This is the oracle the chunked path is checked against.
template <class Real>
SequenceT<Real> scan_from(const SequenceT<Real>& x, const PerTokenParamsT<Real>& tok,
                          const SsmParamsT<Real>& p) {
  check_scan_input(x, p);
  if (tok.len != x.len || tok.state_size != p.state_size)
    throw std::invalid_argument("scan: per-token params shape mismatch");
  const std::size_t L = x.len, d = p.channels, s = p.state_size;
  SequenceT<Real> y(L, d);
  std::vector<Real> h(d * s, Real(0));  // persistent state, one row per channel
  for (std::size_t k = 0; k < L; ++k) {
    const Real dt = tok.delta[k];
    const Real* bk = tok.b.data() + k * s;
    const Real* ck = tok.c.data() + k * s;
    const Real* xk = x[k];
    Real* yk = y[k];
    for (std::size_t c = 0; c < d; ++c) {
      const Real* a = p.a_diag.data() + c * s;
      Real* hc = h.data() + c * s;
      Real acc = Real(0);
      for (std::size_t n = 0; n < s; ++n) {
        const Real abar = std::exp(dt * a[n]);
        const Real bbar = dt * bk[n];
        hc[n] = abar * hc[n] + bbar * xk[c];
        acc += ck[n] * hc[n];
      }
      yk[c] = acc + p.skip[c] * xk[c];
    }
  }
  return y;
}

template <class Real>
SequenceT<Real> scan_sequential(const SequenceT<Real>& x, const SsmParamsT<Real>& p) {
  return scan_from(x, derive_params(x, p), p);
}

// Chunked evaluation. The state update h -> abar*h + bbar*x is an affine map
// of h, and affine maps compose associatively, so each chunk is first solved
// from a zero state (`loc`) together with its accumulated decay (`pref`);
// the true state then enters only in the combine step
//     h_k = pref_k * carry + loc_k
// where carry is the state at the chunk boundary. Same O(L) work as the
// sequential pass, different rounding order -- agreement within 1e-10
// relative is the oracle-equivalence contract.
template <class Real>
SequenceT<Real> scan_chunked(const SequenceT<Real>& x, const SsmParamsT<Real>& p,
                             std::size_t chunk_len, BufferMeter* meter = nullptr) {
  if (chunk_len == 0) throw std::invalid_argument("scan_chunked: chunk_len must be positive");
  const PerTokenParamsT<Real> tok = derive_params(x, p);
  const std::size_t L = x.len, d = p.channels, s = p.state_size;
  SequenceT<Real> y(L, d);
  if (L == 0) return y;

  const std::size_t cl = std::min(chunk_len, L);
  note_buffer(meter, (2 * L * s + L) * sizeof(Real));  // per-token dt, B, C
  note_buffer(meter, 2 * cl * s * sizeof(Real));       // chunk scratch
  note_buffer(meter, L * d * sizeof(Real));            // output
  std::vector<Real> loc(cl * s), pref(cl * s);
  std::vector<Real> carry(s);

  for (std::size_t c = 0; c < d; ++c) {
    const Real* a = p.a_diag.data() + c * s;
    std::fill(carry.begin(), carry.end(), Real(0));
    for (std::size_t start = 0; start < L; start += cl) {
      const std::size_t end = std::min(start + cl, L);
      // Within-chunk pass from a zero state.
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = k - start;
        const Real dt = tok.delta[k];
        const Real* bk = tok.b.data() + k * s;
        const Real xv = x[k][c];
        Real* li = loc.data() + i * s;
        Real* pi = pref.data() + i * s;
        const Real* lp = i ? loc.data() + (i - 1) * s : nullptr;
        const Real* pp = i ? pref.data() + (i - 1) * s : nullptr;
        for (std::size_t n = 0; n < s; ++n) {
          const Real abar = std::exp(dt * a[n]);
          const Real bbar = dt * bk[n];
          li[n] = abar * (i ? lp[n] : Real(0)) + bbar * xv;
          pi[n] = abar * (i ? pp[n] : Real(1));
        }
      }
      // Combine with the incoming state and read out.
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = k - start;
        const Real* ck = tok.c.data() + k * s;
        const Real* li = loc.data() + i * s;
        const Real* pi = pref.data() + i * s;
        Real acc = Real(0);
        for (std::size_t n = 0; n < s; ++n) acc += ck[n] * (pi[n] * carry[n] + li[n]);
        y[k][c] = acc + p.skip[c] * x[k][c];
      }
      const Real* ll = loc.data() + (end - 1 - start) * s;
      const Real* pl = pref.data() + (end - 1 - start) * s;
      for (std::size_t n = 0; n < s; ++n) carry[n] = pl[n] * carry[n] + ll[n];
    }
  }
  return y;
}

// Reverse-mode gradients of the scalar loss <dy, scan(x, p)> with respect to
// the input sequence and every parameter field.
template <class Real>
struct ScanVjpResultT {
  SequenceT<Real> dx;
  std::vector<Real> d_a_diag, d_b_proj, d_c_proj, d_delta_proj;
  Real d_delta_bias = Real(0);
  std::vector<Real> d_skip;
};

using ScanVjpResult = ScanVjpResultT<double>;

template <class Real>
ScanVjpResultT<Real> scan_vjp(const SequenceT<Real>& x, const SsmParamsT<Real>& p,
                              const SequenceT<Real>& dy) {
  check_scan_input(x, p);
  if (dy.len != x.len || dy.dim != x.dim)
    throw std::invalid_argument("scan_vjp: dy shape mismatch");
  const std::size_t L = x.len, d = p.channels, s = p.state_size;

  // Forward pass, keeping what the backward pass needs: pre-softplus logits,
  // per-token params, discretized decays and the state trajectory.
  std::vector<Real> logit(L), h_hist(L * d * s), abar_hist(L * d * s);
  PerTokenParamsT<Real> tok;
  tok.len = L;
  tok.state_size = s;
  tok.delta.assign(L, Real(0));
  tok.b.assign(L * s, Real(0));
  tok.c.assign(L * s, Real(0));
  {
    std::vector<Real> h(d * s, Real(0));
    for (std::size_t k = 0; k < L; ++k) {
      const Real* xk = x[k];
      double lg = static_cast<double>(p.delta_bias);
      for (std::size_t c = 0; c < d; ++c)
        lg += static_cast<double>(p.delta_proj[c]) * static_cast<double>(xk[c]);
      logit[k] = static_cast<Real>(lg);
      tok.delta[k] = static_cast<Real>(softplus(lg));
      Real* bk = tok.b.data() + k * s;
      Real* ck = tok.c.data() + k * s;
      for (std::size_t c = 0; c < d; ++c) {
        const Real* wb = p.b_proj.data() + c * s;
        const Real* wc = p.c_proj.data() + c * s;
        for (std::size_t n = 0; n < s; ++n) {
          bk[n] += wb[n] * xk[c];
          ck[n] += wc[n] * xk[c];
        }
      }
      const Real dt = tok.delta[k];
      for (std::size_t c = 0; c < d; ++c) {
        const Real* a = p.a_diag.data() + c * s;
        Real* hc = h.data() + c * s;
        for (std::size_t n = 0; n < s; ++n) {
          const Real abar = std::exp(dt * a[n]);
          hc[n] = abar * hc[n] + (dt * bk[n]) * xk[c];
          abar_hist[(k * d + c) * s + n] = abar;
          h_hist[(k * d + c) * s + n] = hc[n];
        }
      }
    }
  }

  ScanVjpResultT<Real> g;
  g.dx = SequenceT<Real>(L, d);
  g.d_a_diag.assign(d * s, Real(0));
  g.d_b_proj.assign(d * s, Real(0));
  g.d_c_proj.assign(d * s, Real(0));
  g.d_delta_proj.assign(d, Real(0));
  g.d_skip.assign(d, Real(0));

  // gh_carry[c][n] = dL/dh_{k}[c][n] contribution flowing back from k+1.
  std::vector<Real> gh_carry(d * s, Real(0));
  std::vector<Real> db(s), dc(s);
  for (std::size_t k = L; k-- > 0;) {
    const Real dt = tok.delta[k];
    const Real* bk = tok.b.data() + k * s;
    const Real* ck = tok.c.data() + k * s;
    const Real* xk = x[k];
    const Real* dyk = dy[k];
    Real* dxk = g.dx[k];
    std::fill(db.begin(), db.end(), Real(0));
    std::fill(dc.begin(), dc.end(), Real(0));
    Real d_dt = Real(0);

    for (std::size_t c = 0; c < d; ++c) {
      const Real* a = p.a_diag.data() + c * s;
      const Real* abar_k = abar_hist.data() + (k * d + c) * s;
      const Real* h_k = h_hist.data() + (k * d + c) * s;
      const Real* h_prev = k ? h_hist.data() + ((k - 1) * d + c) * s : nullptr;
      Real* ghc = gh_carry.data() + c * s;
      Real dx_acc = Real(0);
      for (std::size_t n = 0; n < s; ++n) {
        const Real gh = dyk[c] * ck[n] + ghc[n];
        const Real hp = k ? h_prev[n] : Real(0);
        const Real dabar = gh * hp;
        const Real dbbar = gh * xk[c];
        // abar = exp(dt a): d/da = abar dt, d/ddt = abar a.
        g.d_a_diag[c * s + n] += dabar * abar_k[n] * dt;
        d_dt += dabar * abar_k[n] * a[n];
        // bbar = dt B_k[n].
        db[n] += dbbar * dt;
        d_dt += dbbar * bk[n];
        dc[n] += dyk[c] * h_k[n];
        dx_acc += gh * (dt * bk[n]);
        ghc[n] = gh * abar_k[n];  // becomes the carry for k-1
      }
      dxk[c] += dx_acc + dyk[c] * p.skip[c];
      g.d_skip[c] += dyk[c] * xk[c];
    }

    // B_k = w_b^T x_k, C_k = w_c^T x_k.
    for (std::size_t c = 0; c < d; ++c) {
      const Real* wb = p.b_proj.data() + c * s;
      const Real* wc = p.c_proj.data() + c * s;
      Real acc = Real(0);
      for (std::size_t n = 0; n < s; ++n) {
        g.d_b_proj[c * s + n] += db[n] * xk[c];
        g.d_c_proj[c * s + n] += dc[n] * xk[c];
        acc += db[n] * wb[n] + dc[n] * wc[n];
      }
      dxk[c] += acc;
    }

    // dt = softplus(logit), d softplus = logistic.
    const Real d_logit = d_dt * static_cast<Real>(logistic(static_cast<double>(logit[k])));
    g.d_delta_bias += d_logit;
    for (std::size_t c = 0; c < d; ++c) {
      g.d_delta_proj[c] += d_logit * xk[c];
      dxk[c] += d_logit * p.delta_proj[c];
    }
  }
  return g;
}

// Generic random parameters for oracle sweeps and gradient probes.
template <class Real>
SsmParamsT<Real> make_random_params(std::size_t channels, std::size_t state_size,
                                    Rng& rng) {
  SsmParamsT<Real> p;
  p.channels = channels;
  p.state_size = state_size;
  p.a_diag.resize(channels * state_size);
  p.b_proj.resize(channels * state_size);
  p.c_proj.resize(channels * state_size);
  p.delta_proj.resize(channels);
  p.skip.resize(channels);
  const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
  for (Real& v : p.a_diag) v = static_cast<Real>(-rng.uniform(0.2, 2.0));
  for (Real& v : p.b_proj) v = static_cast<Real>(rng.normal() * scale);
  for (Real& v : p.c_proj) v = static_cast<Real>(rng.normal() * scale);
  for (Real& v : p.delta_proj) v = static_cast<Real>(rng.normal() * scale);
  p.delta_bias = static_cast<Real>(rng.uniform(-1.0, 1.0));
  for (Real& v : p.skip) v = static_cast<Real>(rng.normal());
  return p;
}

}  // namespace bimba
