#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hmnet/train.hpp"

namespace hmnet {

inline nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["dataset"] = r.dataset;
  j["horizon"] = r.horizon;
  j["variant"] = r.variant;
  j["split"] = r.split;
  j["mse"] = r.mse;
  j["mae"] = r.mae;
  j["mse_original_scale"] = r.mse_original;
  j["mae_original_scale"] = r.mae_original;
  j["windows"] = r.windows;
  j["epochs_run"] = r.epochs_run;
  j["wall_seconds"] = r.wall_seconds;
  j["seed"] = r.seed;
  j["runs"] = r.runs;
  j["interact_enabled"] = r.interact_enabled;
  j["denoise_enabled"] = r.denoise_enabled;
  if (r.noise) {
    j["noise"] = {{"setting", noise_setting_name(r.noise->setting)},
                  {"mean", r.noise->mean},
                  {"std", r.noise->stdev},
                  {"probability", r.noise->probability},
                  {"seed", r.noise->seed}};
  } else {
    j["noise"] = nullptr;
  }
  if (r.memory) {
    j["memory"] = {{"capacity", r.memory->capacity}, {"top_k", r.memory->top_k}};
  } else {
    j["memory"] = nullptr;
  }
  return j;
}

inline MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.dataset = j.at("dataset").get<std::string>();
  r.horizon = j.at("horizon").get<std::size_t>();
  r.variant = j.at("variant").get<std::string>();
  r.split = j.value("split", std::string("test"));
  r.mse = j.at("mse").get<double>();
  r.mae = j.at("mae").get<double>();
  r.mse_original = j.value("mse_original_scale", 0.0);
  r.mae_original = j.value("mae_original_scale", 0.0);
  r.windows = j.value("windows", std::size_t{0});
  r.epochs_run = j.value("epochs_run", std::size_t{0});
  r.wall_seconds = j.value("wall_seconds", 0.0);
  r.seed = j.value("seed", std::uint64_t{0});
  r.runs = j.value("runs", std::size_t{1});
  r.interact_enabled = j.value("interact_enabled", std::vector<bool>{});
  r.denoise_enabled = j.value("denoise_enabled", std::vector<bool>{});
  if (j.contains("noise") && !j["noise"].is_null()) {
    const auto& n = j["noise"];
    r.noise = NoiseSpec{parse_noise_setting(n.at("setting").get<std::string>()), n.at("mean").get<double>(),
                        n.at("std").get<double>(), n.at("probability").get<double>(), n.at("seed").get<std::uint64_t>()};
  }
  if (j.contains("memory") && !j["memory"].is_null()) {
    r.memory = MemoryConfig{j["memory"].at("capacity").get<std::size_t>(), j["memory"].at("top_k").get<std::size_t>()};
  }
  return r;
}

/// File stem `{dataset}_{horizon}_{variant}`; noise rows append the setting
/// and probability, multi-seed rows that were not averaged append the seed.
inline std::string report_stem(const MetricReport& r, bool with_seed = false) {
  std::string stem = r.dataset + "_" + std::to_string(r.horizon) + "_" + r.variant;
  if (r.noise) {
    char p[16];
    std::snprintf(p, sizeof p, "%.2f", r.noise->probability);
    stem += "_" + noise_setting_name(r.noise->setting) + "_p" + p;
  }
  if (with_seed) stem += "_seed" + std::to_string(r.seed);
  return stem;
}

inline std::filesystem::path write_report_json(const std::filesystem::path& dir, const MetricReport& r,
                                               bool with_seed = false) {
  std::filesystem::create_directories(dir);
  const auto path = dir / (report_stem(r, with_seed) + ".json");
  std::ofstream os(path);
  os << to_json(r).dump(2) << "\n";
  if (!os) throw RuntimeFailure("cannot write " + path.string());
  return path;
}

inline void write_reports_csv(const std::filesystem::path& path, const std::vector<MetricReport>& reports) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  os << "dataset,horizon,variant,split,noise_setting,noise_p,memory_capacity,top_k,mse,mae,mse_original_scale,"
        "mae_original_scale,windows,epochs_run,wall_seconds,seed,runs\n";
  os.precision(10);
  for (const auto& r : reports) {
    os << r.dataset << ',' << r.horizon << ',' << r.variant << ',' << r.split << ','
       << (r.noise ? noise_setting_name(r.noise->setting) : "") << ',';
    if (r.noise) os << r.noise->probability;
    os << ',';
    if (r.memory) os << r.memory->capacity;
    os << ',';
    if (r.memory) os << r.memory->top_k;
    os << ',' << r.mse << ',' << r.mae << ',' << r.mse_original << ',' << r.mae_original << ',' << r.windows << ','
       << r.epochs_run << ',' << r.wall_seconds << ',' << r.seed << ',' << r.runs << '\n';
  }
  if (!os) throw RuntimeFailure("cannot write " + path.string());
}

inline void write_history_csv(const std::filesystem::path& path, const TrainHistory& h) {
  std::ofstream os(path);
  os.precision(10);
  os << "epoch,train_loss,val_mse,seconds\n";
  for (const auto& e : h.epochs) os << e.epoch << ',' << e.train_loss << ',' << e.val_mse << ',' << e.seconds << '\n';
  if (!os) throw RuntimeFailure("cannot write " + path.string());
}

}  // namespace hmnet
