#include "bimba/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "bimba/baselines.hpp"
#include "bimba/csv.hpp"
#include "bimba/ssm.hpp"

namespace bimba {
namespace {

template <class T>
inline void do_not_optimize(const T& value) {
  asm volatile("" : : "g"(&value) : "memory");
}

double median_of(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace

// ---------------------------------------------------------------------------
// Needle dataset

std::vector<std::size_t> default_needle_positions(std::size_t frames, std::size_t count) {
  if (count == 0 || frames == 0)
    throw std::invalid_argument("needle positions: counts must be positive");
  if (count > frames)
    throw std::invalid_argument("needle positions: more positions than frames");
  std::vector<std::size_t> pos(count);
  if (count == 1) {
    pos[0] = frames / 2;
    return pos;
  }
  // Evenly spaced across [0, frames-1], endpoints included.
  for (std::size_t i = 0; i < count; ++i)
    pos[i] = (i * (frames - 1) + (count - 1) / 2) / (count - 1);
  return pos;
}

NeedleDataset gen_needle_dataset(std::size_t frames, std::size_t height,
                                 std::size_t width, std::size_t channels,
                                 std::size_t n_samples,
                                 const std::vector<std::size_t>& positions, Rng& rng,
                                 double amplitude, double noise_sigma) {
  if (n_samples == 0) throw std::invalid_argument("needle dataset: no samples");
  if (positions.empty()) throw std::invalid_argument("needle dataset: no positions");
  for (const std::size_t p : positions)
    if (p >= frames)
      throw std::invalid_argument("needle dataset: position outside frame range");
  if (!(amplitude > 0.0)) throw std::invalid_argument("needle dataset: amplitude <= 0");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("needle dataset: negative sigma");

  NeedleDataset data;
  data.frames = frames;
  data.height = height;
  data.width = width;
  data.channels = channels;
  data.positions = positions;
  data.spec.amplitude = amplitude;
  data.spec.noise_sigma = noise_sigma;
  // The needle is an inserted frame-wide pattern: every token of the needle
  // frame is shifted by amplitude * direction, mimicking an alien image
  // spliced into the video. That keeps the frame's mean projection onto the
  // direction separated from every other frame's by ~amplitude, so retrieval
  // difficulty is governed by the compressor, not by the generator. The
  // anchor cell below records the nominal needle origin.
  data.spec.y = 0;
  data.spec.x = 0;

  // One needle direction for the whole dataset, unit norm.
  data.spec.direction.resize(channels);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& v : data.spec.direction) {
      v = rng.normal();
      norm += v * v;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& v : data.spec.direction) v /= norm;

  data.samples.reserve(n_samples);
  data.labels.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const std::size_t label = i % positions.size();  // balanced by construction
    TokenGrid g(frames, height, width, channels);
    for (double& v : g.data) v = noise_sigma * rng.normal();
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        double* needle = g.token(g.token_index(positions[label], y, x));
        for (std::size_t c = 0; c < channels; ++c)
          needle[c] += amplitude * data.spec.direction[c];
      }
    data.samples.push_back(std::move(g));
    data.labels.push_back(label);
  }
  return data;
}

// ---------------------------------------------------------------------------
// Ridge probe

namespace {

// Dense SPD solve via Cholesky, B overwritten with A^-1 B.
void cholesky_solve_in_place(Mat& a, Mat& b) {
  const std::size_t n = a.rows;
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a.at(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= a.at(j, k) * a.at(j, k);
    if (!(diag > 0.0))
      throw std::invalid_argument("ridge_probe: singular system (increase lambda)");
    const double root = std::sqrt(diag);
    a.at(j, j) = root;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a.at(i, k) * a.at(j, k);
      a.at(i, j) = s / root;
    }
  }
  const std::size_t m = b.cols;
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < n; ++i) {  // L z = b
      double s = b.at(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= a.at(i, k) * b.at(k, c);
      b.at(i, c) = s / a.at(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {  // L^T w = z
      double s = b.at(i, c);
      for (std::size_t k = i + 1; k < n; ++k) s -= a.at(k, i) * b.at(k, c);
      b.at(i, c) = s / a.at(i, i);
    }
  }
}

Mat matmul_t_left(const Mat& f, const Mat& y) {  // F^T Y
  Mat out(f.cols, y.cols);
  for (std::size_t r = 0; r < f.rows; ++r)
    for (std::size_t i = 0; i < f.cols; ++i) {
      const double v = f.at(r, i);
      if (v == 0.0) continue;
      for (std::size_t j = 0; j < y.cols; ++j) out.at(i, j) += v * y.at(r, j);
    }
  return out;
}

}  // namespace

Mat ridge_probe(const Mat& features, const Mat& targets, double lambda) {
  if (features.rows == 0 || features.cols == 0)
    throw std::invalid_argument("ridge_probe: empty feature matrix");
  if (targets.rows != features.rows || targets.cols == 0)
    throw std::invalid_argument("ridge_probe: target shape mismatch");
  if (!(lambda >= 0.0)) throw std::invalid_argument("ridge_probe: negative lambda");

  const std::size_t n = features.rows, p = features.cols;
  if (p <= n) {
    Mat a(p, p);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < p; ++i) {
        const double v = features.at(r, i);
        if (v == 0.0) continue;
        for (std::size_t j = 0; j < p; ++j) a.at(i, j) += v * features.at(r, j);
      }
    for (std::size_t i = 0; i < p; ++i) a.at(i, i) += lambda;
    Mat b = matmul_t_left(features, targets);
    cholesky_solve_in_place(a, b);
    return b;
  }
  // Dual form: W = F^T (F F^T + lambda I)^-1 Y.
  Mat g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < p; ++c) s += features.at(i, c) * features.at(j, c);
      g.at(i, j) = s;
    }
  for (std::size_t i = 0; i < n; ++i) g.at(i, i) += lambda;
  Mat s = targets;
  cholesky_solve_in_place(g, s);
  return matmul_t_left(features, s);
}

std::vector<std::size_t> argmax_rows(const Mat& scores) {
  std::vector<std::size_t> out(scores.rows, 0);
  for (std::size_t r = 0; r < scores.rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < scores.cols; ++c)
      if (scores.at(r, c) > scores.at(r, best)) best = c;
    out[r] = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Needle evaluation

const char* method_name(CompressMethod m) {
  switch (m) {
    case CompressMethod::selector: return "selector";
    case CompressMethod::pooling: return "pooling";
    case CompressMethod::attention: return "attention";
    case CompressMethod::perceiver: return "perceiver";
    case CompressMethod::vanilla: return "vanilla";
  }
  throw std::invalid_argument("method_name: unknown method");
}

CompressMethod method_from_name(const std::string& name) {
  for (CompressMethod m :
       {CompressMethod::selector, CompressMethod::pooling, CompressMethod::attention,
        CompressMethod::perceiver, CompressMethod::vanilla})
    if (name == method_name(m)) return m;
  throw std::invalid_argument("unknown method: " + name);
}

namespace {

struct Compressor {
  EvalConfig cfg;
  std::size_t t_out, h_out, w_out;
  SelectorParams sel_params;
  AttentionParams attn_params;
  Sequence question;

  Compressor(const EvalConfig& c, const NeedleDataset& data) : cfg(c) {
    const SelectorConfig& sc = cfg.selector;
    validate_config(sc);
    if (data.frames % sc.temporal_factor != 0 || data.height % sc.spatial_factor != 0 ||
        data.width % sc.spatial_factor != 0)
      throw std::invalid_argument("needle eval: factors do not divide grid dims");
    t_out = data.frames / sc.temporal_factor;
    h_out = data.height / sc.spatial_factor;
    w_out = data.width / sc.spatial_factor;
    const std::size_t n_queries = t_out * h_out * w_out;
    switch (cfg.method) {
      case CompressMethod::selector:
        sel_params = init_selector_params<double>(data.channels, sc);
        if (cfg.question)
          question = make_question_tokens<double>(data.channels, cfg.question_len,
                                                  sc.seed ^ kQuestionSeedSalt);
        break;
      case CompressMethod::attention:
        attn_params = init_attention_params<double>(data.channels, 0, sc.seed);
        break;
      case CompressMethod::perceiver:
        // Same compression ratio as the selector: one latent per query cell.
        attn_params = init_attention_params<double>(data.channels, n_queries, sc.seed);
        break;
      default:
        break;
    }
  }

  std::vector<double> features(const TokenGrid& z) const {
    switch (cfg.method) {
      case CompressMethod::selector: {
        const Sequence* q = cfg.question ? &question : nullptr;
        return select_tokens(z, q, cfg.selector, sel_params).data;
      }
      case CompressMethod::pooling:
        return pool_compress(z, t_out, h_out, w_out).data;
      case CompressMethod::attention: {
        const QueryGrid q = adaptive_pool3d(z, t_out, h_out, w_out);
        return attention_compress(z, q, attn_params).data;
      }
      case CompressMethod::perceiver:
        return perceiver_compress(z, attn_params).data;
      case CompressMethod::vanilla:
        return vanilla_pass(z).data;
    }
    throw std::invalid_argument("needle eval: unknown method");
  }
};

}  // namespace

NeedleEvalResult run_needle_eval(const EvalConfig& cfg, const NeedleDataset& data,
                                 Rng& rng) {
  const std::size_t n = data.samples.size();
  if (n == 0) throw std::invalid_argument("needle eval: empty dataset");
  if (data.labels.size() != n)
    throw std::invalid_argument("needle eval: label count mismatch");
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0))
    throw std::invalid_argument("needle eval: train fraction must be in (0, 1)");

  const Compressor comp(cfg, data);
  std::vector<std::vector<double>> feats(n);
  for (std::size_t i = 0; i < n; ++i) feats[i] = comp.features(data.samples[i]);
  const std::size_t p = feats[0].size();

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i-- > 1;)
    std::swap(order[i], order[rng.below(i + 1)]);

  const std::size_t n_train = static_cast<std::size_t>(cfg.train_fraction * n);
  const std::size_t n_test = n - n_train;
  if (n_train == 0 || n_test == 0)
    throw std::invalid_argument("needle eval: empty train or test split");

  const std::size_t k = data.positions.size();
  Mat f_train(n_train, p), y_train(n_train, k);
  for (std::size_t r = 0; r < n_train; ++r) {
    const std::size_t i = order[r];
    std::memcpy(&f_train.at(r, 0), feats[i].data(), p * sizeof(double));
    y_train.at(r, data.labels[i]) = 1.0;
  }
  const Mat w = ridge_probe(f_train, y_train, cfg.lambda);

  Mat scores(n_test, k);
  for (std::size_t r = 0; r < n_test; ++r) {
    const std::size_t i = order[n_train + r];
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < p; ++j) s += feats[i][j] * w.at(j, c);
      scores.at(r, c) = s;
    }
  }
  const std::vector<std::size_t> pred = argmax_rows(scores);

  NeedleEvalResult result;
  result.train_count = n_train;
  result.test_count = n_test;
  result.per_position.assign(k, 0.0);
  std::vector<std::size_t> counts(k, 0), correct(k, 0);
  for (std::size_t r = 0; r < n_test; ++r) {
    const std::size_t truth = data.labels[order[n_train + r]];
    ++counts[truth];
    if (pred[r] == truth) ++correct[truth];
  }
  std::size_t total_correct = 0;
  for (std::size_t c = 0; c < k; ++c) {
    total_correct += correct[c];
    result.per_position[c] =
        counts[c] ? static_cast<double>(correct[c]) / static_cast<double>(counts[c]) : 0.0;
  }
  result.accuracy = static_cast<double>(total_correct) / static_cast<double>(n_test);
  return result;
}

// ---------------------------------------------------------------------------
// Scaling benchmark

namespace {

constexpr std::size_t kBenchFrameTokens = 64;  // 8 x 8 spatial cells per frame
constexpr std::size_t kBenchSide = 8;
constexpr std::size_t kBenchTemporalFactor = 4;
constexpr std::size_t kBenchSpatialFactor = 2;
constexpr std::size_t kBenchLatents = 256;  // perceiver latent count, fixed

template <class Real>
GridT<Real> make_bench_grid(std::size_t tokens, std::size_t channels, Rng& rng) {
  GridT<Real> g(tokens / kBenchFrameTokens, kBenchSide, kBenchSide, channels);
  for (Real& v : g.data) v = static_cast<Real>(rng.normal());
  return g;
}

template <class Real>
BenchmarkRecord bench_one(CompressMethod method, std::size_t tokens,
                          const BenchConfig& cfg) {
  BenchmarkRecord rec;
  rec.method = method_name(method);
  rec.tokens = tokens;
  rec.status = "ok";

  const std::size_t predicted =
      predicted_peak_bytes(method, tokens, cfg.channels, cfg.state_size, sizeof(Real));
  if (predicted > cfg.budget_bytes) {
    rec.status = "capacity";
    rec.peak_bytes = predicted;
    return rec;
  }

  Rng rng(cfg.seed ^ (0x9E3779B97F4A7C15ull * tokens));
  const GridT<Real> grid = make_bench_grid<Real>(tokens, cfg.channels, rng);
  const std::size_t t_out = grid.frames / kBenchTemporalFactor;
  const std::size_t h_out = grid.height / kBenchSpatialFactor;
  const std::size_t w_out = grid.width / kBenchSpatialFactor;

  SelectorConfig sel_cfg;
  sel_cfg.temporal_factor = kBenchTemporalFactor;
  sel_cfg.spatial_factor = kBenchSpatialFactor;
  sel_cfg.state_size = cfg.state_size;
  sel_cfg.seed = cfg.seed;
  SelectorParamsT<Real> sel_params;
  AttentionParamsT<Real> attn_params;
  GridT<Real> pooled;
  switch (method) {
    case CompressMethod::selector:
      sel_params = init_selector_params<Real>(cfg.channels, sel_cfg);
      break;
    case CompressMethod::attention:
      attn_params = init_attention_params<Real>(cfg.channels, 0, cfg.seed);
      pooled = adaptive_pool3d(grid, t_out, h_out, w_out);
      break;
    case CompressMethod::perceiver:
      attn_params = init_attention_params<Real>(cfg.channels, kBenchLatents, cfg.seed);
      break;
    default:
      break;
  }

  BufferMeter meter;
  auto run = [&]() {
    switch (method) {
      case CompressMethod::selector:
        do_not_optimize(select_tokens(grid, static_cast<const SequenceT<Real>*>(nullptr),
                                      sel_cfg, sel_params, &meter));
        break;
      case CompressMethod::pooling:
        do_not_optimize(adaptive_pool3d(grid, t_out, h_out, w_out, &meter));
        break;
      case CompressMethod::attention:
        do_not_optimize(attention_compress(grid, pooled, attn_params, &meter));
        break;
      case CompressMethod::perceiver:
        do_not_optimize(perceiver_compress(grid, attn_params, &meter));
        break;
      case CompressMethod::vanilla:
        do_not_optimize(vanilla_pass(grid, &meter));
        break;
    }
  };

  try {
    run();  // warm-up
    std::vector<double> times;
    times.reserve(cfg.repetitions);
    for (std::size_t r = 0; r < cfg.repetitions; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      run();
      const auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    rec.median_seconds = median_of(times);
    rec.peak_bytes = meter.peak_bytes;
  } catch (const capacity_error& e) {
    rec.status = "capacity";
    rec.median_seconds = 0.0;
    rec.peak_bytes = e.requested_bytes();
  }
  return rec;
}

}  // namespace

std::size_t predicted_peak_bytes(CompressMethod method, std::size_t tokens,
                                 std::size_t channels, std::size_t state_size,
                                 std::size_t elem_size) {
  const std::size_t queries = tokens / (kBenchTemporalFactor * kBenchSpatialFactor *
                                        kBenchSpatialFactor);
  const std::size_t combined = tokens + queries;
  switch (method) {
    case CompressMethod::selector:
      // Largest of the per-token scan buffers and the assembled sequence.
      return combined * std::max(2 * state_size + 1, channels) * elem_size;
    case CompressMethod::pooling:
      return queries * channels * elem_size;
    case CompressMethod::attention:
      return combined * combined * elem_size;  // the score matrix
    case CompressMethod::perceiver:
      return tokens * channels * elem_size;  // key/value projections
    case CompressMethod::vanilla:
      return tokens * channels * elem_size;
  }
  throw std::invalid_argument("predicted_peak_bytes: unknown method");
}

std::vector<BenchmarkRecord> bench_scaling(const BenchConfig& cfg) {
  if (cfg.methods.empty() || cfg.token_counts.empty())
    throw std::invalid_argument("bench: methods and token counts must be non-empty");
  if (cfg.repetitions < 5)
    throw std::invalid_argument("bench: need at least 5 repetitions for a median");
  if (cfg.channels == 0 || cfg.state_size == 0)
    throw std::invalid_argument("bench: channels and state_size must be positive");
  const std::size_t granule =
      kBenchFrameTokens * kBenchTemporalFactor;  // full pooling bins per frame row
  for (const std::size_t t : cfg.token_counts)
    if (t == 0 || t % granule != 0)
      throw std::invalid_argument("bench: token counts must be positive multiples of " +
                                  std::to_string(granule));

  std::vector<BenchmarkRecord> records;
  for (const CompressMethod m : cfg.methods)
    for (const std::size_t t : cfg.token_counts)
      records.push_back(cfg.precision == Precision::f64 ? bench_one<double>(m, t, cfg)
                                                        : bench_one<float>(m, t, cfg));
  return records;
}

void emit_summary(const std::vector<BenchmarkRecord>& records,
                  const std::string& csv_path, std::ostream& text) {
  std::vector<BenchmarkRecord> sorted = records;
  std::sort(sorted.begin(), sorted.end(),
            [](const BenchmarkRecord& a, const BenchmarkRecord& b) {
              return a.method != b.method ? a.method < b.method : a.tokens < b.tokens;
            });

  std::vector<CsvRow> rows;
  rows.reserve(sorted.size());
  for (const BenchmarkRecord& r : sorted)
    rows.push_back({r.method, std::to_string(r.tokens), format_double(r.median_seconds),
                    std::to_string(r.peak_bytes), r.status});
  write_csv(csv_path, {"method", "tokens", "median_seconds", "peak_bytes", "status"},
            rows);

  bool has_perceiver = false;
  std::ostringstream table;
  table << "method      tokens  median_seconds   peak_bytes  status\n";
  for (const BenchmarkRecord& r : sorted) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-9s %8zu  %14.6e %12zu  %s\n", r.method.c_str(),
                  r.tokens, r.median_seconds, r.peak_bytes, r.status.c_str());
    table << line;
    has_perceiver |= r.method == "perceiver";
  }
  if (has_perceiver)
    table << "note: perceiver rows use a single cross-attention layer (floor variant)\n";
  text << table.str();
}

std::vector<BenchmarkRecord> parse_bench_csv(const std::string& path) {
  const std::vector<CsvRow> rows = read_csv(path);
  const CsvRow expected = {"method", "tokens", "median_seconds", "peak_bytes", "status"};
  if (rows.empty() || rows[0] != expected)
    throw std::runtime_error(path + ": missing or unexpected benchmark header");
  std::vector<BenchmarkRecord> records;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const CsvRow& row = rows[i];
    if (row.size() != expected.size())
      throw std::runtime_error(path + ": wrong column count on row " + std::to_string(i));
    BenchmarkRecord r;
    r.method = row[0];
    r.tokens = std::stoull(row[1]);
    r.median_seconds = std::strtod(row[2].c_str(), nullptr);
    r.peak_bytes = std::stoull(row[3]);
    r.status = row[4];
    if (r.status != "ok" && r.status != "capacity")
      throw std::runtime_error(path + ": unknown status '" + r.status + "'");
    records.push_back(std::move(r));
  }
  return records;
}

void write_needle_csv(const std::string& path, const std::string& method,
                      std::uint64_t seed, const NeedleEvalResult& result) {
  CsvRow header = {"method", "seed", "accuracy"};
  CsvRow row = {method, std::to_string(seed), format_double(result.accuracy)};
  for (std::size_t i = 0; i < result.per_position.size(); ++i) {
    header.push_back("pos_" + std::to_string(i));
    row.push_back(format_double(result.per_position[i]));
  }
  write_csv(path, header, {row});
}

// ---------------------------------------------------------------------------
// Kernel equivalence check

double scan_oracle_check(std::uint64_t seed, std::size_t cases) {
  if (cases == 0) throw std::invalid_argument("scan check: no cases");
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < cases; ++i) {
    const std::size_t len = 1 + rng.below(256);
    const std::size_t d = 1 + rng.below(8);
    const std::size_t s = 1 + rng.below(16);
    const SsmParams p = make_random_params<double>(d, s, rng);
    Sequence x(len, d);
    for (double& v : x.data) v = rng.normal();
    const Sequence ref = scan_sequential(x, p);
    for (const std::size_t chunk : {std::size_t(1), std::size_t(3), std::size_t(7),
                                    std::size_t(32), len})
      worst = std::max(worst, max_relative_deviation(scan_chunked(x, p, chunk), ref));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks

namespace {

double fd_relative_error(const std::vector<double>& analytic,
                         const std::vector<double>& numeric) {
  double scale = 0.0;
  for (const double g : analytic) scale = std::max(scale, std::fabs(g));
  const double tau = 1e-3 * (1.0 + scale);  // floor keeps near-zero coords sane
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom =
        std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), tau});
    worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

double fd_check_quadratic(std::uint64_t seed, double step, std::size_t instances) {
  double worst = 0.0;
  Rng rng(seed);
  for (std::size_t inst = 0; inst < instances; ++inst) {
    const std::size_t dim = 4 + rng.below(12);
    std::vector<double> x(dim);
    for (double& v : x) v = rng.normal();
    auto f = [&x]() {
      double s = 0.0;
      for (const double v : x) s += v * v;
      return s;
    };
    std::vector<double> analytic(dim), numeric(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      analytic[i] = 2.0 * x[i];
      const double keep = x[i];
      x[i] = keep + step;
      const double hi = f();
      x[i] = keep - step;
      const double lo = f();
      x[i] = keep;
      numeric[i] = (hi - lo) / (2.0 * step);
    }
    worst = std::max(worst, fd_relative_error(analytic, numeric));
  }
  return worst;
}

double fd_check_scan(std::uint64_t seed, double step, std::size_t instances) {
  double worst = 0.0;
  Rng rng(seed);
  for (std::size_t inst = 0; inst < instances; ++inst) {
    const std::size_t len = 2 + rng.below(5);
    const std::size_t d = 1 + rng.below(3);
    const std::size_t s = 1 + rng.below(4);
    SsmParams p = make_random_params<double>(d, s, rng);
    Sequence x(len, d), dy(len, d);
    for (double& v : x.data) v = rng.normal();
    for (double& v : dy.data) v = rng.normal();

    const ScanVjpResult vjp = scan_vjp(x, p, dy);

    auto loss = [&]() {
      const Sequence y = scan_sequential(x, p);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.data.size(); ++i) acc += dy.data[i] * y.data[i];
      return acc;
    };
    auto central = [&](double* coord) {
      const double keep = *coord;
      *coord = keep + step;
      const double hi = loss();
      *coord = keep - step;
      const double lo = loss();
      *coord = keep;
      return (hi - lo) / (2.0 * step);
    };

    // Every coordinate: the input sequence and all parameter fields.
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      coords.push_back(&x.data[i]);
      analytic.push_back(vjp.dx.data[i]);
    }
    auto add_field = [&](std::vector<double>& field, const std::vector<double>& grad) {
      for (std::size_t i = 0; i < field.size(); ++i) {
        coords.push_back(&field[i]);
        analytic.push_back(grad[i]);
      }
    };
    add_field(p.a_diag, vjp.d_a_diag);
    add_field(p.b_proj, vjp.d_b_proj);
    add_field(p.c_proj, vjp.d_c_proj);
    add_field(p.delta_proj, vjp.d_delta_proj);
    coords.push_back(&p.delta_bias);
    analytic.push_back(vjp.d_delta_bias);
    add_field(p.skip, vjp.d_skip);

    std::vector<double> numeric(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) numeric[i] = central(coords[i]);
    worst = std::max(worst, fd_relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace

double fd_check(const std::string& op_id, std::uint64_t seed, double step,
                std::size_t instances) {
  if (!(step > 0.0)) throw std::invalid_argument("fd_check: step must be positive");
  if (instances == 0) throw std::invalid_argument("fd_check: no instances");
  if (op_id == "quadratic") return fd_check_quadratic(seed, step, instances);
  if (op_id == "scan") return fd_check_scan(seed, step, instances);
  throw std::invalid_argument("fd_check: unknown op id '" + op_id + "'");
}

}  // namespace bimba
