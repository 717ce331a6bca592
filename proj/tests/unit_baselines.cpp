#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <vector>

#include "bimba/baselines.hpp"
#include "bimba/rng.hpp"
#include "bimba/selector.hpp"
#include "doctest.h"

using namespace bimba;

namespace {

TokenGrid random_grid(std::size_t t, std::size_t h, std::size_t w, std::size_t d,
                      std::uint64_t seed) {
  TokenGrid g(t, h, w, d);
  Rng rng(seed);
  for (double& v : g.data) v = rng.normal();
  return g;
}

std::vector<double> identity_matrix(std::size_t d) {
  std::vector<double> m(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) m[i * d + i] = 1.0;
  return m;
}

}  // namespace

TEST_CASE("vanilla_pass forwards every token unchanged") {
  const TokenGrid z = random_grid(3, 2, 2, 4, 1);
  BufferMeter meter;
  const Sequence out = vanilla_pass(z, &meter);
  CHECK(out.len == z.token_count());
  CHECK(out.dim == z.channels);
  CHECK(std::memcmp(out.data.data(), z.data.data(),
                    z.data.size() * sizeof(double)) == 0);
  CHECK(meter.peak_bytes == z.data.size() * sizeof(double));
}

TEST_CASE("pool_compress is the shared adaptive pooling kernel") {
  const TokenGrid z = random_grid(6, 4, 4, 3, 2);
  const TokenGrid a = pool_compress(z, 3, 2, 2);
  const TokenGrid b = adaptive_pool3d(z, 3, 2, 2);
  CHECK(a.data == b.data);
  CHECK(a.frames == 3);
  CHECK(a.height == 2);
  CHECK(a.width == 2);
}

TEST_CASE("softmax_row normalizes, saturates safely, and splits ties evenly") {
  std::vector<double> two = {3.25, 3.25};
  softmax_row(two.data(), 2);
  CHECK(two[0] == 0.5);
  CHECK(two[1] == 0.5);

  std::vector<double> big = {1000.0, 999.0, -1000.0};
  softmax_row(big.data(), 3);
  double sum = 0.0;
  for (const double v : big) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(big[0] > big[1]);
  CHECK(big[2] < 1e-300);
}

TEST_CASE("perceiver with zero key projection averages the value tokens") {
  const std::size_t d = 3;
  const TokenGrid z = random_grid(2, 2, 2, d, 5);  // 8 tokens
  AttentionParams p;
  p.dim = d;
  p.latent_count = 2;
  p.wq = identity_matrix(d);
  p.wk.assign(d * d, 0.0);  // all scores equal -> uniform attention
  p.wv = identity_matrix(d);
  p.wo = identity_matrix(d);
  p.latents.assign(p.latent_count * d, 0.7);
  const Sequence out = perceiver_compress(z, p);
  REQUIRE(out.len == 2);
  std::vector<double> mean(d, 0.0);
  for (std::size_t j = 0; j < z.token_count(); ++j)
    for (std::size_t c = 0; c < d; ++c) mean[c] += z.token(j)[c];
  for (double& v : mean) v /= double(z.token_count());
  for (std::size_t i = 0; i < out.len; ++i)
    for (std::size_t c = 0; c < d; ++c)
      CHECK(out[i][c] == doctest::Approx(mean[c]).epsilon(1e-12));
}

TEST_CASE("perceiver attention rows are convex combinations end to end") {
  // With identity value/output projections and all tokens equal to u, the
  // output equals u exactly iff each attention row sums to one.
  const std::size_t d = 4;
  TokenGrid z(2, 3, 1, d);
  const double u[] = {1.5, -2.0, 0.25, 4.0};
  for (std::size_t k = 0; k < z.token_count(); ++k)
    for (std::size_t c = 0; c < d; ++c) z.token(k)[c] = u[c];
  AttentionParams p = init_attention_params<double>(d, 3, 99);
  p.wv = identity_matrix(d);
  p.wo = identity_matrix(d);
  const Sequence out = perceiver_compress(z, p);
  for (std::size_t i = 0; i < out.len; ++i)
    for (std::size_t c = 0; c < d; ++c)
      CHECK(out[i][c] == doctest::Approx(u[c]).epsilon(1e-12));
}

TEST_CASE("perceiver validates latents and channel agreement") {
  const TokenGrid z = random_grid(2, 2, 2, 3, 7);
  AttentionParams none = init_attention_params<double>(3, 0, 1);
  CHECK_THROWS_AS(perceiver_compress(z, none), std::invalid_argument);
  AttentionParams wrong = init_attention_params<double>(4, 2, 1);
  CHECK_THROWS_AS(perceiver_compress(z, wrong), std::invalid_argument);
}

TEST_CASE("attention reports the dense score matrix bytes exactly") {
  const TokenGrid z = random_grid(4, 4, 4, 4, 11);   // L = 64
  const TokenGrid q = pool_compress(z, 2, 2, 2);     // N = 8
  const AttentionParams p = init_attention_params<double>(4, 0, 12);
  BufferMeter meter;
  const Sequence out = attention_compress(z, q, p, &meter);
  CHECK(out.len == q.token_count());
  CHECK(out.dim == 4);
  const std::size_t combined = 64 + 8;
  CHECK(attention_score_bytes<double>(combined) == combined * combined * 8);
  CHECK(meter.peak_bytes == combined * combined * 8);

  // Doubling the token count quadruples the score bytes (plus the query
  // growth), exactly per the closed form.
  const TokenGrid z2 = random_grid(8, 4, 4, 4, 13);  // L = 128
  const TokenGrid q2 = pool_compress(z2, 4, 2, 2);   // N = 16
  BufferMeter meter2;
  (void)attention_compress(z2, q2, p, &meter2);
  CHECK(meter2.peak_bytes == (128 + 16) * (128 + 16) * 8);
}

TEST_CASE("attention output is deterministic and ignores video token order") {
  const std::size_t d = 4;
  const TokenGrid z = random_grid(3, 2, 2, d, 21);
  const TokenGrid q = pool_compress(z, 1, 1, 1);
  const AttentionParams p = init_attention_params<double>(d, 0, 22);
  const Sequence a = attention_compress(z, q, p);
  const Sequence b = attention_compress(z, q, p);
  CHECK(a.data == b.data);

  // Reverse the video tokens; the attention mixture over them is order-free.
  TokenGrid rev = z;
  const std::size_t L = z.token_count();
  for (std::size_t k = 0; k < L; ++k)
    std::memcpy(rev.token(k), z.token(L - 1 - k), d * sizeof(double));
  const Sequence c = attention_compress(rev, q, p);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    CHECK(c.data[i] == doctest::Approx(a.data[i]).epsilon(1e-11));
}

TEST_CASE("attention validates channel agreement") {
  const TokenGrid z = random_grid(2, 2, 2, 3, 31);
  const TokenGrid q = pool_compress(z, 1, 1, 1);
  const AttentionParams p = init_attention_params<double>(4, 0, 32);
  CHECK_THROWS_AS(attention_compress(z, q, p), std::invalid_argument);
}

TEST_CASE("attention parameter initialization is seed-deterministic") {
  const AttentionParams a = init_attention_params<double>(5, 3, 41);
  const AttentionParams b = init_attention_params<double>(5, 3, 41);
  const AttentionParams c = init_attention_params<double>(5, 3, 42);
  CHECK(a.wq == b.wq);
  CHECK(a.latents == b.latents);
  CHECK(a.wq != c.wq);
  CHECK(a.latents.size() == 3 * 5);
  CHECK_THROWS_AS(init_attention_params<double>(0, 1, 1), std::invalid_argument);
}
