// Command-line front end: every experiment and check in the library, one
// subcommand each. Data goes to stdout or to files named by flags; human
// diagnostics go to stderr. Exit 0 on success, 1 on a failed check, 2 on
// usage errors (bad flags, unreadable inputs, inconsistent shapes).
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bimba/baselines.hpp"
#include "bimba/csv.hpp"
#include "bimba/harness.hpp"
#include "bimba/selector.hpp"
#include "bimba/tensor_io.hpp"

namespace {

using namespace bimba;

struct SelectorFlags {
  std::uint64_t seed = 0;
  std::size_t tf = 4;
  std::size_t sf = 2;
  std::string layout = "interleave";
  std::string direction = "bi";
  std::size_t state_size = 8;
  std::size_t depth = 1;
  bool question = false;
  std::size_t question_len = 8;
};

SelectorConfig to_config(const SelectorFlags& f) {
  SelectorConfig cfg;
  cfg.temporal_factor = f.tf;
  cfg.spatial_factor = f.sf;
  cfg.layout = f.layout == "append" ? LayoutMode::append_end : LayoutMode::interleaved;
  cfg.direction =
      f.direction == "uni" ? ScanDirection::unidirectional : ScanDirection::bidirectional;
  cfg.state_size = f.state_size;
  cfg.scan_depth = f.depth;
  cfg.seed = f.seed;
  return cfg;
}

void add_selector_flags(CLI::App* cmd, SelectorFlags* f, bool seed_required) {
  CLI::Option* seed = cmd->add_option("--seed", f->seed, "RNG seed (u64)");
  if (seed_required) seed->required();
  cmd->add_option("--tf", f->tf, "temporal compression factor")->capture_default_str();
  cmd->add_option("--sf", f->sf, "spatial compression factor")->capture_default_str();
  cmd->add_option("--layout", f->layout, "query slot layout")
      ->check(CLI::IsMember({"append", "interleave"}))
      ->capture_default_str();
  cmd->add_option("--direction", f->direction, "scan direction")
      ->check(CLI::IsMember({"uni", "bi"}))
      ->capture_default_str();
  cmd->add_option("--state-size", f->state_size, "scan state size")->capture_default_str();
  cmd->add_option("--depth", f->depth, "number of scan layers")->capture_default_str();
  cmd->add_flag("--question", f->question, "condition on seeded synthetic question tokens");
  cmd->add_option("--question-len", f->question_len, "question token count")
      ->capture_default_str();
}

Precision parse_precision(const std::string& s) {
  if (s == "f64" || s == "f64-equivalent") return Precision::f64;
  if (s == "f32" || s == "f32-equivalent") return Precision::f32;
  throw std::invalid_argument("unknown precision: " + s);
}

int cmd_scan_check(std::uint64_t seed, std::size_t cases, double tol) {
  const double dev = scan_oracle_check(seed, cases);
  std::cout << "cases=" << cases << "\n"
            << "max_relative_deviation=" << format_double(dev) << "\n";
  const bool ok = dev <= tol;
  std::cerr << "scan-check: " << (ok ? "PASS" : "FAIL") << " (deviation "
            << format_double(dev) << ", tolerance " << format_double(tol) << ")\n";
  return ok ? 0 : 1;
}

int cmd_grad_check(const std::string& op, std::uint64_t seed, double step,
                   std::size_t instances, double tol) {
  const double err = fd_check(op, seed, step, instances);
  std::cout << "op=" << op << "\n"
            << "instances=" << instances << "\n"
            << "step=" << format_double(step) << "\n"
            << "max_relative_error=" << format_double(err) << "\n";
  const bool ok = err <= tol;
  std::cerr << "grad-check: " << (ok ? "PASS" : "FAIL") << " (error "
            << format_double(err) << ", tolerance " << format_double(tol) << ")\n";
  return ok ? 0 : 1;
}

struct BenchFlags {
  std::uint64_t seed = 0;
  std::vector<std::string> methods = {"selector", "pooling", "attention", "perceiver",
                                      "vanilla"};
  std::vector<std::size_t> tokens = {1024, 2048, 4096};
  std::size_t reps = BenchConfig().repetitions;
  std::size_t budget = BenchConfig().budget_bytes;
  std::string precision = "f64";
  std::string csv;
};

int cmd_bench(const BenchFlags& f) {
  BenchConfig cfg;
  cfg.seed = f.seed;
  for (const std::string& name : f.methods) cfg.methods.push_back(method_from_name(name));
  cfg.token_counts = f.tokens;
  cfg.repetitions = f.reps;
  cfg.budget_bytes = f.budget;
  cfg.precision = parse_precision(f.precision);
  const std::vector<BenchmarkRecord> records = bench_scaling(cfg);
  emit_summary(records, f.csv, std::cerr);
  std::cerr << "bench: " << records.size() << " records -> " << f.csv << "\n";
  return 0;
}

struct NeedleFlags {
  std::string method = "selector";
  std::size_t frames = 32, height = 8, width = 8, channels = 16;
  std::size_t samples = 200, positions = 8;
  double amplitude = 4.0, sigma = 0.5;
  double lambda = 1e-3, train_fraction = 0.7;
  std::string csv;
};

int cmd_needle(const NeedleFlags& nf, const SelectorFlags& sf) {
  EvalConfig cfg;
  cfg.method = method_from_name(nf.method);
  cfg.selector = to_config(sf);
  cfg.question = sf.question;
  cfg.question_len = sf.question_len;
  cfg.lambda = nf.lambda;
  cfg.train_fraction = nf.train_fraction;

  Rng gen_rng(sf.seed);
  const std::vector<std::size_t> positions =
      default_needle_positions(nf.frames, nf.positions);
  const NeedleDataset data =
      gen_needle_dataset(nf.frames, nf.height, nf.width, nf.channels, nf.samples,
                         positions, gen_rng, nf.amplitude, nf.sigma);
  Rng eval_rng(sf.seed ^ kSplitSeedSalt);
  const NeedleEvalResult result = run_needle_eval(cfg, data, eval_rng);

  std::cout << "method=" << nf.method << "\n"
            << "seed=" << sf.seed << "\n"
            << "accuracy=" << format_double(result.accuracy) << "\n";
  for (std::size_t i = 0; i < result.per_position.size(); ++i)
    std::cout << "pos_" << i << "=" << format_double(result.per_position[i]) << "\n";
  if (!nf.csv.empty()) write_needle_csv(nf.csv, nf.method, sf.seed, result);
  std::cerr << "needle: " << nf.method << " test accuracy "
            << format_double(result.accuracy) << " (" << result.train_count
            << " train / " << result.test_count << " test)\n";
  return 0;
}

int cmd_compress(const std::string& in_path, const std::string& out_path,
                 const SelectorFlags& sf, const std::string& precision) {
  const TokenGrid z = read_tensor(in_path);
  const SelectorConfig cfg = to_config(sf);
  const SelectorParams params = init_selector_params<double>(z.channels, cfg);
  Sequence question;
  const Sequence* qp = nullptr;
  if (sf.question) {
    question =
        make_question_tokens<double>(z.channels, sf.question_len, sf.seed ^ kQuestionSeedSalt);
    qp = &question;
  }
  const QueryGrid out = select_tokens(z, qp, cfg, params);
  const TensorDtype dtype =
      parse_precision(precision) == Precision::f64 ? TensorDtype::f64 : TensorDtype::f32;
  write_tensor(out, out_path, dtype);
  std::cerr << "compress: " << z.frames << "x" << z.height << "x" << z.width << "x"
            << z.channels << " -> " << out.frames << "x" << out.height << "x"
            << out.width << "x" << out.channels << " (" << z.token_count() << " -> "
            << out.token_count() << " tokens)\n";
  return 0;
}

int cmd_info(const std::string& in_path, const std::vector<std::size_t>& dims,
             std::size_t tf, std::size_t sf) {
  if (in_path.empty() == dims.empty())
    throw std::invalid_argument("info: pass exactly one of --in and --dims");
  std::size_t t, h, w, d;
  if (!in_path.empty()) {
    const TensorInfo info = read_tensor_info(in_path);
    t = info.frames;
    h = info.height;
    w = info.width;
    d = info.channels;
    std::cout << "dtype=" << (info.dtype == TensorDtype::f64 ? "f64" : "f32") << "\n";
  } else {
    if (dims.size() != 4)
      throw std::invalid_argument("info: --dims needs frames,height,width,channels");
    t = dims[0];
    h = dims[1];
    w = dims[2];
    d = dims[3];
  }
  if (t == 0 || h == 0 || w == 0 || d == 0)
    throw std::invalid_argument("info: dimensions must be positive");
  if (t % tf != 0 || h % sf != 0 || w % sf != 0)
    throw std::invalid_argument("info: factors do not divide the grid dimensions");
  const std::size_t in_tokens = t * h * w;
  const std::size_t out_tokens = in_tokens / (tf * sf * sf);
  std::cout << "frames=" << t << "\nheight=" << h << "\nwidth=" << w
            << "\nchannels=" << d << "\ninput_tokens=" << in_tokens
            << "\noutput_frames=" << t / tf << "\noutput_height=" << h / sf
            << "\noutput_width=" << w / sf << "\noutput_tokens=" << out_tokens
            << "\ncompression_ratio=" << tf * sf * sf << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"token-grid compressor: selective-scan selector, baselines, checks"};
  app.require_subcommand(1);

  // scan-check
  CLI::App* scan_cmd = app.add_subcommand(
      "scan-check", "chunked scan vs sequential reference over seeded cases");
  std::uint64_t scan_seed = 0;
  std::size_t scan_cases = 100;
  double scan_tol = 1e-10;
  scan_cmd->add_option("--seed", scan_seed, "RNG seed (u64)")->required();
  scan_cmd->add_option("--cases", scan_cases, "number of random instances")
      ->capture_default_str();
  scan_cmd->add_option("--tol", scan_tol, "max allowed relative deviation")
      ->capture_default_str();

  // grad-check
  CLI::App* grad_cmd =
      app.add_subcommand("grad-check", "analytic gradients vs central differences");
  std::uint64_t grad_seed = 0;
  std::string grad_op = "scan";
  double grad_step = 1e-5, grad_tol = 1e-5;
  std::size_t grad_instances = 20;
  grad_cmd->add_option("--seed", grad_seed, "RNG seed (u64)")->required();
  grad_cmd->add_option("--op", grad_op, "operator to probe")
      ->check(CLI::IsMember({"scan", "quadratic"}))
      ->capture_default_str();
  grad_cmd->add_option("--step", grad_step, "finite-difference step")->capture_default_str();
  grad_cmd->add_option("--instances", grad_instances, "number of random instances")
      ->capture_default_str();
  grad_cmd->add_option("--tol", grad_tol, "max allowed relative error")
      ->capture_default_str();

  // bench
  CLI::App* bench_cmd =
      app.add_subcommand("bench", "wall-time and peak-buffer scaling curves");
  BenchFlags bench_flags;
  bench_cmd->add_option("--seed", bench_flags.seed, "RNG seed (u64)")->required();
  bench_cmd->add_option("--methods", bench_flags.methods, "comma-separated methods")
      ->delimiter(',')
      ->capture_default_str();
  bench_cmd->add_option("--tokens", bench_flags.tokens, "input token counts (x256)")
      ->delimiter(',')
      ->capture_default_str();
  bench_cmd->add_option("--reps", bench_flags.reps, "timed repetitions (median)")
      ->capture_default_str();
  bench_cmd->add_option("--budget-bytes", bench_flags.budget, "peak-buffer budget")
      ->capture_default_str();
  bench_cmd->add_option("--precision", bench_flags.precision, "f64|f32")
      ->capture_default_str();
  bench_cmd->add_option("--csv", bench_flags.csv, "output CSV path")->required();

  // needle
  CLI::App* needle_cmd =
      app.add_subcommand("needle", "needle-retention probe on a synthetic dataset");
  NeedleFlags needle_flags;
  SelectorFlags needle_sel;
  add_selector_flags(needle_cmd, &needle_sel, /*seed_required=*/true);
  needle_cmd->add_option("--method", needle_flags.method, "compression method")
      ->capture_default_str();
  needle_cmd->add_option("--frames", needle_flags.frames)->capture_default_str();
  needle_cmd->add_option("--height", needle_flags.height)->capture_default_str();
  needle_cmd->add_option("--width", needle_flags.width)->capture_default_str();
  needle_cmd->add_option("--channels", needle_flags.channels)->capture_default_str();
  needle_cmd->add_option("--samples", needle_flags.samples)->capture_default_str();
  needle_cmd->add_option("--positions", needle_flags.positions, "needle frame count")
      ->capture_default_str();
  needle_cmd->add_option("--amplitude", needle_flags.amplitude)->capture_default_str();
  needle_cmd->add_option("--sigma", needle_flags.sigma, "background noise sigma")
      ->capture_default_str();
  needle_cmd->add_option("--lambda", needle_flags.lambda, "ridge regularizer")
      ->capture_default_str();
  needle_cmd->add_option("--train-fraction", needle_flags.train_fraction)
      ->capture_default_str();
  needle_cmd->add_option("--csv", needle_flags.csv, "optional output CSV path");

  // compress
  CLI::App* compress_cmd =
      app.add_subcommand("compress", "compress a tensor file with the selector");
  SelectorFlags compress_sel;
  std::string compress_in, compress_out, compress_precision = "f64";
  add_selector_flags(compress_cmd, &compress_sel, /*seed_required=*/false);
  compress_cmd->add_option("--in", compress_in, "input tensor path")->required();
  compress_cmd->add_option("--out", compress_out, "output tensor path")->required();
  compress_cmd->add_option("--precision", compress_precision, "output dtype f64|f32")
      ->capture_default_str();

  // info
  CLI::App* info_cmd = app.add_subcommand("info", "shape and compression arithmetic");
  std::string info_in;
  std::vector<std::size_t> info_dims;
  std::size_t info_tf = 4, info_sf = 2;
  info_cmd->add_option("--in", info_in, "tensor path (header only)");
  info_cmd->add_option("--dims", info_dims, "frames,height,width,channels")
      ->delimiter(',');
  info_cmd->add_option("--tf", info_tf, "temporal compression factor")
      ->capture_default_str();
  info_cmd->add_option("--sf", info_sf, "spatial compression factor")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // help to stdout, errors to stderr
    return code == 0 ? 0 : 2;
  }

  try {
    if (scan_cmd->parsed()) return cmd_scan_check(scan_seed, scan_cases, scan_tol);
    if (grad_cmd->parsed())
      return cmd_grad_check(grad_op, grad_seed, grad_step, grad_instances, grad_tol);
    if (bench_cmd->parsed()) return cmd_bench(bench_flags);
    if (needle_cmd->parsed()) return cmd_needle(needle_flags, needle_sel);
    if (compress_cmd->parsed())
      return cmd_compress(compress_in, compress_out, compress_sel, compress_precision);
    if (info_cmd->parsed()) return cmd_info(info_in, info_dims, info_tf, info_sf);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
