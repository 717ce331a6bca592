#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <vector>

#include "bimba/harness.hpp"
#include "bimba/rng.hpp"
#include "bimba/ssm.hpp"
#include "doctest.h"

using namespace bimba;

namespace {

Sequence random_sequence(std::size_t len, std::size_t dim, std::uint64_t seed) {
  Sequence x(len, dim);
  Rng rng(seed);
  for (double& v : x.data) v = rng.normal();
  return x;
}

// Independent reference: recompute the recurrence with plain loops straight
// from the raw parameters, sharing no helper with the library scan.
Sequence naive_scan(const Sequence& x, const SsmParams& p) {
  const std::size_t L = x.len, d = p.channels, s = p.state_size;
  Sequence y(L, d);
  std::vector<double> h(d * s, 0.0);
  for (std::size_t k = 0; k < L; ++k) {
    double logit = double(p.delta_bias);
    for (std::size_t c = 0; c < d; ++c) logit += p.delta_proj[c] * x[k][c];
    const double dt = std::log1p(std::exp(-std::fabs(logit))) + std::max(logit, 0.0);
    std::vector<double> bk(s, 0.0), ck(s, 0.0);
    for (std::size_t n = 0; n < s; ++n)
      for (std::size_t c = 0; c < d; ++c) {
        bk[n] += p.b_proj[c * s + n] * x[k][c];
        ck[n] += p.c_proj[c * s + n] * x[k][c];
      }
    for (std::size_t c = 0; c < d; ++c) {
      double out = p.skip[c] * x[k][c];
      for (std::size_t n = 0; n < s; ++n) {
        const double abar = std::exp(dt * p.a_diag[c * s + n]);
        h[c * s + n] = abar * h[c * s + n] + dt * bk[n] * x[k][c];
        out += ck[n] * h[c * s + n];
      }
      y[k][c] = out;
    }
  }
  return y;
}

}  // namespace

TEST_CASE("scan matches a two-step hand computation") {
  // One channel, one state, delta pinned to exactly 1 via the bias.
  SsmParams p;
  p.channels = 1;
  p.state_size = 1;
  p.a_diag = {-std::log(2.0)};  // decay 0.5 per step at dt = 1
  p.b_proj = {1.0};
  p.c_proj = {1.0};
  p.delta_proj = {0.0};
  p.delta_bias = std::log(std::exp(1.0) - 1.0);  // softplus -> 1 exactly
  p.skip = {0.0};

  Sequence x(2, 1);
  x.data = {1.0, 1.0};
  const Sequence y = scan_sequential(x, p);
  // h1 = 1, y1 = 1; h2 = 0.5 * 1 + 1 = 1.5, y2 = 1.5.
  CHECK(y.data[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(y.data[1] == doctest::Approx(1.5).epsilon(1e-14));

  p.skip = {2.0};
  const Sequence ys = scan_sequential(x, p);
  CHECK(ys.data[0] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(ys.data[1] == doctest::Approx(3.5).epsilon(1e-14));
}

TEST_CASE("derive_params computes softplus steps and token projections") {
  Rng rng(31);
  const SsmParams p = make_random_params<double>(3, 2, rng);
  const Sequence x = random_sequence(4, 3, 77);
  const PerTokenParams tok = derive_params(x, p);
  REQUIRE(tok.len == 4);
  REQUIRE(tok.state_size == 2);
  for (std::size_t k = 0; k < 4; ++k) {
    double logit = p.delta_bias;
    for (std::size_t c = 0; c < 3; ++c) logit += p.delta_proj[c] * x[k][c];
    const double dt = std::log1p(std::exp(logit < 0 ? logit : -logit)) +
                      (logit > 0 ? logit : 0.0);
    CHECK(tok.delta[k] == doctest::Approx(dt).epsilon(1e-14));
    CHECK(tok.delta[k] > 0.0);
    for (std::size_t n = 0; n < 2; ++n) {
      double b = 0.0, c_v = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        b += p.b_proj[c * 2 + n] * x[k][c];
        c_v += p.c_proj[c * 2 + n] * x[k][c];
      }
      CHECK(tok.b[k * 2 + n] == doctest::Approx(b).epsilon(1e-13));
      CHECK(tok.c[k * 2 + n] == doctest::Approx(c_v).epsilon(1e-13));
    }
  }
}

TEST_CASE("scan agrees with an independent naive recomputation") {
  for (const std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Rng rng(seed);
    const std::size_t L = 1 + rng.below(40), d = 1 + rng.below(5),
                      s = 1 + rng.below(6);
    const SsmParams p = make_random_params<double>(d, s, rng);
    const Sequence x = random_sequence(L, d, seed ^ 0xABCD);
    const Sequence got = scan_sequential(x, p);
    const Sequence want = naive_scan(x, p);
    CHECK(max_relative_deviation(got, want) <= 1e-12);
  }
}

TEST_CASE("chunked scan with chunk length 1 is bitwise equal to sequential") {
  Rng rng(5);
  const SsmParams p = make_random_params<double>(3, 4, rng);
  const Sequence x = random_sequence(57, 3, 6);
  const Sequence seq = scan_sequential(x, p);
  const Sequence one = scan_chunked(x, p, 1);
  REQUIRE(one.data.size() == seq.data.size());
  CHECK(std::memcmp(one.data.data(), seq.data.data(),
                    seq.data.size() * sizeof(double)) == 0);
}

TEST_CASE("chunked scan matches sequential over assorted chunk lengths") {
  Rng rng(8);
  const SsmParams p = make_random_params<double>(2, 5, rng);
  const Sequence x = random_sequence(129, 2, 9);
  const Sequence seq = scan_sequential(x, p);
  for (const std::size_t chunk : {2ul, 3ul, 7ul, 32ul, 128ul, 129ul, 1000ul}) {
    const Sequence got = scan_chunked(x, p, chunk);
    CHECK(max_relative_deviation(got, seq) <= 1e-10);
  }
  CHECK_THROWS_AS(scan_chunked(x, p, 0), std::invalid_argument);
}

TEST_CASE("seeded oracle equivalence sweep stays under tolerance") {
  CHECK(scan_oracle_check(123, 20) <= 1e-10);
}

TEST_CASE("unidirectional scan is causal to the bit") {
  Rng rng(17);
  const SsmParams p = make_random_params<double>(4, 3, rng);
  const Sequence x = random_sequence(64, 4, 18);
  const Sequence base = scan_chunked(x, p, 16);
  for (const std::size_t j : {63ul, 40ul, 10ul, 1ul}) {
    Sequence bumped = x;
    bumped[j][0] += 2.5;
    bumped[j][3] -= 1.0;
    const Sequence out = scan_chunked(bumped, p, 16);
    // Positions before j must be unchanged exactly; position j must react.
    CHECK(std::memcmp(out.data.data(), base.data.data(),
                      j * 4 * sizeof(double)) == 0);
    bool reacted = false;
    for (std::size_t c = 0; c < 4; ++c)
      reacted = reacted || out[j][c] != base[j][c];
    CHECK(reacted);
  }
}

TEST_CASE("scan_vjp returns exact zeros for a zero cotangent") {
  Rng rng(21);
  const SsmParams p = make_random_params<double>(3, 2, rng);
  const Sequence x = random_sequence(20, 3, 22);
  Sequence dy(20, 3);  // zeros
  const ScanVjpResult g = scan_vjp(x, p, dy);
  for (const double v : g.dx.data) CHECK(v == 0.0);
  for (const double v : g.d_a_diag) CHECK(v == 0.0);
  for (const double v : g.d_b_proj) CHECK(v == 0.0);
  for (const double v : g.d_c_proj) CHECK(v == 0.0);
  for (const double v : g.d_delta_proj) CHECK(v == 0.0);
  for (const double v : g.d_skip) CHECK(v == 0.0);
  CHECK(g.d_delta_bias == 0.0);
}

TEST_CASE("scan_vjp respects causality in reverse") {
  Rng rng(23);
  const SsmParams p = make_random_params<double>(3, 2, rng);
  const Sequence x = random_sequence(30, 3, 24);
  Sequence dy(30, 3);
  const std::size_t i = 11;
  dy[i][1] = 1.0;  // loss depends only on y[11]
  const ScanVjpResult g = scan_vjp(x, p, dy);
  // y[11] depends on x[0..11] only, so dx must vanish strictly after i.
  for (std::size_t j = i + 1; j < 30; ++j)
    for (std::size_t c = 0; c < 3; ++c) CHECK(g.dx[j][c] == 0.0);
  // ... and generically not before.
  double before = 0.0;
  for (std::size_t j = 0; j <= i; ++j)
    for (std::size_t c = 0; c < 3; ++c) before += std::fabs(g.dx[j][c]);
  CHECK(before > 0.0);
}

TEST_CASE("finite differences confirm the gradient on small instances") {
  // The quadratic has zero truncation error, so what remains is rounding
  // amplified by the 1/(2h) division: ~1e-9 at step 1e-5.
  CHECK(fd_check("quadratic", 5, 1e-5, 5) <= 1e-8);
  CHECK(fd_check("scan", 5, 1e-5, 5) <= 1e-5);
}

TEST_CASE("a coarse finite-difference step reports a visibly larger error") {
  const double fine = fd_check("scan", 9, 1e-5, 3);
  const double coarse = fd_check("scan", 9, 1e-1, 3);
  CHECK(fine <= 1e-5);
  CHECK(coarse > fine * 10.0);
}

TEST_CASE("fd_check validates its arguments") {
  CHECK_THROWS_AS(fd_check("scan", 1, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(fd_check("scan", 1, -1e-5, 1), std::invalid_argument);
  CHECK_THROWS_AS(fd_check("scan", 1, 1e-5, 0), std::invalid_argument);
  CHECK_THROWS_AS(fd_check("no_such_op", 1, 1e-5, 1), std::invalid_argument);
}

TEST_CASE("long sequences stay finite under the default-style parameters") {
  Rng rng(29);
  const SsmParams p = make_random_params<double>(2, 2, rng);
  const Sequence x = random_sequence(50000, 2, 30);
  const Sequence y = scan_chunked(x, p, 128);
  for (const double v : y.data) CHECK(std::isfinite(v));
}

TEST_CASE("parameter validation catches structural mistakes") {
  Rng rng(33);
  SsmParams p = make_random_params<double>(2, 2, rng);
  CHECK_NOTHROW(validate_params(p));

  SsmParams bad_a = p;
  bad_a.a_diag[1] = 0.5;  // decay rates must be strictly negative
  CHECK_THROWS_AS(validate_params(bad_a), std::invalid_argument);

  SsmParams bad_b = p;
  bad_b.b_proj.pop_back();
  CHECK_THROWS_AS(validate_params(bad_b), std::invalid_argument);

  SsmParams bad_skip = p;
  bad_skip.skip.clear();
  CHECK_THROWS_AS(validate_params(bad_skip), std::invalid_argument);

  const Sequence wrong_dim = random_sequence(5, 3, 1);
  CHECK_THROWS_AS(scan_sequential(wrong_dim, p), std::invalid_argument);
}

TEST_CASE("scan buffer accounting is deterministic and scales with length") {
  Rng rng(41);
  const SsmParams p = make_random_params<double>(3, 3, rng);
  const Sequence x_small = random_sequence(64, 3, 42);
  const Sequence x_big = random_sequence(512, 3, 43);
  BufferMeter m1, m2, m_big;
  (void)scan_chunked(x_small, p, 32, &m1);
  (void)scan_chunked(x_small, p, 32, &m2);
  (void)scan_chunked(x_big, p, 32, &m_big);
  CHECK(m1.peak_bytes > 0);
  CHECK(m1.peak_bytes == m2.peak_bytes);
  CHECK(m_big.peak_bytes >= m1.peak_bytes);
}
