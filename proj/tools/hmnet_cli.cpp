// hmnet command-line driver: ingest, train, eval, ablate, noise, memsweep,
// selfcheck. Exit codes: 0 success, 1 validation failure, 2 runtime failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "hmnet/checkpoint.hpp"
#include "hmnet/experiments.hpp"
#include "hmnet/report_io.hpp"
#include "hmnet/run_config.hpp"
#include "hmnet/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace hmnet;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<std::size_t> horizon;
};

RunConfig resolve(const Common& o) {
  std::istringstream defaults;
  RunConfig c = o.config.empty() ? parse_run_config(defaults) : load_run_config(o.config);
  if (o.seed) {
    c.train.seed = *o.seed;
    c.model.seed = *o.seed;
    c.seeds.clear();
  }
  if (o.jobs) c.jobs = *o.jobs;
  if (o.horizon) {
    c.model.horizon = *o.horizon;
    c.horizons = {*o.horizon};
  }
  if (!o.out.empty()) c.out = o.out;
  c.validate();
  return c;
}

fs::path prepare_run_dir(const RunConfig& c) {
  const fs::path dir(c.out);
  fs::create_directories(dir);
  std::ofstream os(dir / "resolved_config.ini");
  os << to_ini(c);
  if (!os) throw RuntimeFailure("cannot write " + (dir / "resolved_config.ini").string());
  return dir;
}

void print_report(const MetricReport& r) {
  const std::string prefix = r.dataset + "_" + std::to_string(r.horizon) + "_";
  std::printf("%-10s H=%-4zu %-30s mse=%.6f mae=%.6f (original scale mse=%.6g mae=%.6g) epochs=%zu\n",
              r.dataset.c_str(), r.horizon, report_stem(r).substr(prefix.size()).c_str(), r.mse, r.mae,
              r.mse_original, r.mae_original, r.epochs_run);
}

/// Per-seed rows to reports.csv, seed-averaged rows to JSON files and
/// summary.csv.
void write_outputs(const fs::path& dir, const std::vector<MetricReport>& rows) {
  write_reports_csv(dir / "reports.csv", rows);
  const auto averaged = average_over_seeds(rows);
  write_reports_csv(dir / "summary.csv", averaged);
  for (const auto& r : averaged) {
    write_report_json(dir, r);
    print_report(r);
  }
}

int cmd_ingest(const Common& o, const std::string& data_path) {
  RunConfig c = resolve(o);
  if (!data_path.empty()) {
    c.data.path = data_path;
    if (c.data.name == "sinusoid") c.data.name = fs::path(data_path).stem().string();
  }
  const auto ds = load_dataset(c.data);
  const auto w = split_and_standardize(ds, ratios_for(c.data), c.model.input_length, c.model.horizon);
  std::ostringstream bytes;
  write_window_cache(bytes, w);
  const fs::path dir = prepare_run_dir(c);
  const fs::path cache = dir / (ds.name + "_" + std::to_string(w.input_length) + "_" + std::to_string(w.horizon) + ".cache");
  {
    std::ofstream os(cache, std::ios::binary);
    os << bytes.str();
    if (!os) throw RuntimeFailure("cannot write " + cache.string());
  }
  std::printf("dataset %s: T_total=%zu N=%zu frequency=%s\n", ds.name.c_str(), ds.values.rows, ds.values.cols,
              ds.frequency.c_str());
  std::printf("windows (T=%zu, H=%zu): train=%zu val=%zu test=%zu\n", w.input_length, w.horizon, w.count(Split::train),
              w.count(Split::val), w.count(Split::test));
  std::printf("cache %s checksum %016llx\n", cache.string().c_str(),
              static_cast<unsigned long long>(fnv1a64(bytes.str())));
  return 0;
}

int cmd_train(const Common& o) {
  const RunConfig c = resolve(o);
  auto setup = make_setup(c);
  const fs::path dir = prepare_run_dir(c);
  std::vector<MetricReport> rows;
  for (auto h : c.horizon_list()) {
    const auto w = setup.windows(h);
    for (auto seed : c.seed_list()) {
      TrainConfig tc = c.train;
      tc.seed = seed;
      auto run = run_single(w, setup.model, tc);
      const std::string tag = std::to_string(h) + "_" + ablation_name(tc.ablation) + "_seed" + std::to_string(seed);
      write_history_csv(dir / ("history_" + tag + ".csv"), run.history);
      save_checkpoint((dir / ("checkpoint_" + tag + ".bin")).string(), run.model);
      rows.push_back(run.report);
    }
  }
  write_outputs(dir, rows);
  return 0;
}

int cmd_eval(const Common& o, const std::string& checkpoint, const std::string& split) {
  RunConfig c = resolve(o);
  HMNet model = load_checkpoint(checkpoint);
  c.model = model.config();
  const auto ds = load_dataset(c.data);
  if (ds.values.cols != model.config().num_variables) {
    throw ValidationError("checkpoint expects " + std::to_string(model.config().num_variables) +
                          " variables, dataset has " + std::to_string(ds.values.cols));
  }
  const auto w = split_and_standardize(ds, ratios_for(c.data), model.config().input_length, model.config().horizon);
  Split s = Split::test;
  if (split == "val") s = Split::val;
  else if (split == "train") s = Split::train;
  else if (split != "test") throw ValidationError("unknown split '" + split + "'");
  auto r = evaluate(model, w, s, nullptr, c.train.max_eval_windows);
  r.seed = model.config().seed;
  r.variant = "eval";
  const fs::path dir = prepare_run_dir(c);
  write_outputs(dir, {r});
  return 0;
}

int cmd_ablate(const Common& o) {
  const RunConfig c = resolve(o);
  const auto setup = make_setup(c);
  const fs::path dir = prepare_run_dir(c);
  write_outputs(dir, run_ablation_suite(setup, c.horizon_list()));
  return 0;
}

int cmd_noise(const Common& o) {
  const RunConfig c = resolve(o);
  const auto setup = make_setup(c);
  const fs::path dir = prepare_run_dir(c);
  std::vector<MetricReport> rows;
  for (auto h : c.horizon_list()) {
    auto part = train_and_run_noise_sweep(setup, h, c.noise.settings, c.noise.probabilities);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  write_outputs(dir, rows);
  return 0;
}

int cmd_memsweep(const Common& o) {
  const RunConfig c = resolve(o);
  const auto setup = make_setup(c);
  const fs::path dir = prepare_run_dir(c);
  write_outputs(dir, run_memory_sweep(setup, c.horizon_list(), c.memory_configs));
  return 0;
}

int cmd_selfcheck(bool corrupt_mask, std::optional<std::uint64_t> seed) {
  SelfcheckOptions opt;
  opt.corrupt_mask = corrupt_mask;
  if (seed) opt.seed = *seed;
  bool ok = true;
  for (const auto& r : run_selfcheck(opt)) {
    std::printf("%s  %-32s max_error=%.3e  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.max_error,
                r.detail.c_str());
    ok = ok && r.passed;
  }
  std::printf("selfcheck: %s\n", ok ? "all checks passed" : "FAILED");
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HMNet forecasting: data ingestion, training, evaluation and experiment sweeps"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&common](CLI::App* sub, bool with_horizon = true) {
    sub->add_option("--config", common.config, "Run configuration (INI)");
    sub->add_option("--out", common.out, "Output directory (overrides [run] out)");
    sub->add_option("--seed", common.seed, "Seed (overrides [run] seed and seeds)");
    sub->add_option("--jobs", common.jobs, "Parallel runs for sweeps")->check(CLI::PositiveNumber);
    if (with_horizon) sub->add_option("--horizon", common.horizon, "Forecast horizon")->check(CLI::PositiveNumber);
  };
  std::string data_path, checkpoint, split = "test";
  bool corrupt_mask = false;

  auto* ingest = app.add_subcommand("ingest", "Validate a CSV, build windows and write a binary cache");
  add_common(ingest);
  ingest->add_option("--data", data_path, "CSV file (overrides [data] path)");
  auto* train_cmd = app.add_subcommand("train", "Train one model per horizon and seed");
  add_common(train_cmd);
  auto* eval = app.add_subcommand("eval", "Evaluate a saved checkpoint");
  add_common(eval, false);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  eval->add_option("--split", split, "train, val or test");
  auto* ablate = app.add_subcommand("ablate", "full / no_interact / no_denoise / no_both");
  add_common(ablate);
  auto* noise = app.add_subcommand("noise", "Noise-robustness sweep of full vs no_denoise");
  add_common(noise);
  auto* memsweep = app.add_subcommand("memsweep", "Memory size / top-K sweep");
  add_common(memsweep);
  auto* selfcheck = app.add_subcommand("selfcheck", "Gradient, retrieval, FIFO and shape self-tests");
  selfcheck->add_option("--seed", common.seed, "Seed for randomized checks");
  selfcheck->add_flag("--corrupt-mask", corrupt_mask, "Test hook: break the W_v zero-diagonal invariant");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*ingest) return cmd_ingest(common, data_path);
    if (*train_cmd) return cmd_train(common);
    if (*eval) return cmd_eval(common, checkpoint, split);
    if (*ablate) return cmd_ablate(common);
    if (*noise) return cmd_noise(common);
    if (*memsweep) return cmd_memsweep(common);
    if (*selfcheck) return cmd_selfcheck(corrupt_mask, common.seed);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 2;
  }
  return 1;
}
