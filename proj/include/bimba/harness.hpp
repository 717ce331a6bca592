// Desk-scale verification and benchmark harness: synthetic needle-retrieval
// datasets, a ridge-regression read-out probe, cost-curve benchmarks with
// capacity budgeting, and finite-difference gradient checks. Everything is
// reproducible bit-for-bit from (seed, config); wall-clock timings are the
// one exception.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bimba/grid.hpp"
#include "bimba/rng.hpp"
#include "bimba/selector.hpp"

namespace bimba {

// ---------------------------------------------------------------------------
// Needle-in-a-haystack dataset

struct NeedleSpec {
  std::vector<double> direction;  // unit d-vector, shared across the dataset
  std::size_t frame = 0;          // label-determined needle frame
  std::size_t y = 0, x = 0;       // nominal anchor cell of the inserted frame
  double amplitude = 4.0;
  double noise_sigma = 0.5;
};

struct NeedleDataset {
  std::size_t frames = 0, height = 0, width = 0, channels = 0;
  std::vector<std::size_t> positions;  // candidate needle frames
  std::vector<TokenGrid> samples;
  std::vector<std::size_t> labels;  // index into positions, balanced
  NeedleSpec spec;                  // frame field varies per sample; rest shared
};

// Evenly spaced frame indices including both endpoints.
std::vector<std::size_t> default_needle_positions(std::size_t frames, std::size_t count);

// Each sample is Gaussian background noise plus one inserted needle frame:
// amplitude * direction is added to every token of the label's frame, the
// way a spliced-in image shifts all of its patches at once.
NeedleDataset gen_needle_dataset(std::size_t frames, std::size_t height,
                                 std::size_t width, std::size_t channels,
                                 std::size_t n_samples,
                                 const std::vector<std::size_t>& positions, Rng& rng,
                                 double amplitude = 4.0, double noise_sigma = 0.5);

// ---------------------------------------------------------------------------
// Ridge probe

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

// Solves W = (F^T F + lambda I)^-1 F^T Y; when features outnumber samples
// the algebraically identical dual form F^T (F F^T + lambda I)^-1 Y keeps
// the factorization at min(n, p). Throws on a singular system (lambda = 0
// with rank-deficient F).
Mat ridge_probe(const Mat& features, const Mat& targets, double lambda);

// Row-wise argmax with first-index tie-breaking.
std::vector<std::size_t> argmax_rows(const Mat& scores);

// ---------------------------------------------------------------------------
// Needle evaluation

// Salts derive independent deterministic streams from one user seed: one for
// synthetic question tokens, one for the train/test shuffle.
constexpr std::uint64_t kQuestionSeedSalt = 0x71AEB2C4D1E5F301ull;
constexpr std::uint64_t kSplitSeedSalt = 0xD1B54A32D192ED03ull;

enum class CompressMethod { selector, pooling, attention, perceiver, vanilla };

const char* method_name(CompressMethod m);
CompressMethod method_from_name(const std::string& name);

struct EvalConfig {
  CompressMethod method = CompressMethod::selector;
  SelectorConfig selector;  // factors/layout/direction/seed; also keys baselines
  bool question = false;
  std::size_t question_len = 8;
  double lambda = 1e-3;
  double train_fraction = 0.7;
};

struct NeedleEvalResult {
  double accuracy = 0.0;                  // overall test accuracy
  std::vector<double> per_position;      // test accuracy per needle position
  std::size_t train_count = 0, test_count = 0;
};

// Compresses every sample with frozen seeded parameters, fits the ridge
// probe on a 70/30 split (shuffled by `rng`), and reports test accuracy
// overall and per needle position.
NeedleEvalResult run_needle_eval(const EvalConfig& cfg, const NeedleDataset& data,
                                 Rng& rng);

// ---------------------------------------------------------------------------
// Scaling benchmark

enum class Precision { f64, f32 };

struct BenchConfig {
  std::vector<CompressMethod> methods;
  std::vector<std::size_t> token_counts;  // input video tokens, multiples of 256
  std::uint64_t seed = 0;
  std::size_t repetitions = 7;  // median over these, after one warm-up
  std::size_t budget_bytes = std::size_t(2) << 30;
  Precision precision = Precision::f64;
  std::size_t channels = 16;
  std::size_t state_size = 8;
};

struct BenchmarkRecord {
  std::string method;
  std::size_t tokens = 0;
  double median_seconds = 0.0;  // 0 for capacity rows
  std::size_t peak_bytes = 0;   // kernel accounting; predicted for capacity rows
  std::string status;           // "ok" | "capacity"
};

// Peak transient bytes a method will report at this size; the budget check
// runs against this prediction so over-budget configurations are never
// allocated in the first place.
std::size_t predicted_peak_bytes(CompressMethod method, std::size_t tokens,
                                 std::size_t channels, std::size_t state_size,
                                 std::size_t elem_size);

std::vector<BenchmarkRecord> bench_scaling(const BenchConfig& cfg);

// Sorted (method, tokens) CSV plus an aligned text table.
void emit_summary(const std::vector<BenchmarkRecord>& records,
                  const std::string& csv_path, std::ostream& text);

std::vector<BenchmarkRecord> parse_bench_csv(const std::string& path);

void write_needle_csv(const std::string& path, const std::string& method,
                      std::uint64_t seed, const NeedleEvalResult& result);

// ---------------------------------------------------------------------------
// Kernel equivalence check

// Worst relative deviation of the chunked scan against the sequential
// reference over seeded random instances (len <= 256, channels <= 8,
// state <= 16) at chunk lengths {1, 3, 7, 32, len}.
double scan_oracle_check(std::uint64_t seed, std::size_t cases = 100);

// ---------------------------------------------------------------------------
// Finite-difference gradient checks

// Central differences with the given step against the analytic gradients.
// op_id "quadratic" calibrates the machinery on f(x) = x.x (error at
// rounding level); op_id "scan" probes <dy, scan(x, p)> on seeded small
// instances over every coordinate of x and all parameter fields. Returns
// the worst relative error observed; too-large steps simply report large.
double fd_check(const std::string& op_id, std::uint64_t seed, double step,
                std::size_t instances = 20);

}  // namespace bimba
