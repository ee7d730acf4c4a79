#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "hmnet/config.hpp"
#include "hmnet/data.hpp"
#include "hmnet/experiments.hpp"
#include "hmnet/train.hpp"

namespace hmnet {

/// Where a run's series comes from. `name` doubles as the report prefix. The
/// built-in name "sinusoid" with no path uses the synthetic generator.
struct DataRef {
  std::string name = "sinusoid";
  std::string path;
  std::string registry;
  std::string frequency;
  std::size_t max_rows = 0;
  std::optional<SplitRatios> ratios;  // unset: by dataset family
  std::size_t sinusoid_steps = 2000;
  std::size_t sinusoid_variables = 4;
  double sinusoid_noise = 0.0;
};

struct NoiseSweepConfig {
  std::vector<NoiseSetting> settings{NoiseSetting::residual_only, NoiseSetting::trend_and_residual};
  std::vector<double> probabilities{0.0, 0.1, 0.2, 0.3, 0.4};
};

struct RunConfig {
  DataRef data;
  HMNetConfig model;
  TrainConfig train;
  NoiseSweepConfig noise;
  std::vector<MemoryConfig> memory_configs{{256, 1}, {4096, 16}, {16384, 64}};
  std::vector<std::size_t> horizons;  // empty: {model.horizon}
  std::vector<std::uint64_t> seeds;   // empty: {train.seed}
  std::string out = "runs";
  std::size_t jobs = 1;

  std::vector<std::size_t> horizon_list() const { return horizons.empty() ? std::vector{model.horizon} : horizons; }
  std::vector<std::uint64_t> seed_list() const { return seeds.empty() ? std::vector{train.seed} : seeds; }

  void validate() const {
    model.validate();
    train.validate();
    for (auto h : horizons) {
      if (h == 0) throw ValidationError("config: horizons must be >= 1");
    }
    if (jobs == 0) throw ValidationError("config: jobs must be >= 1");
    for (double p : noise.probabilities) {
      if (p < 0.0 || p > 1.0) throw ValidationError("config: noise probabilities must lie in [0, 1]");
    }
    for (const auto& m : memory_configs) {
      if (m.capacity == 0 || m.top_k == 0) throw ValidationError("config: memsweep entries need M >= 1 and K >= 1");
    }
    if (data.ratios) {
      const auto& r = *data.ratios;
      if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) throw ValidationError("config: split ratios must sum to 1");
    }
  }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

template <class T>
T parse_value(const std::string& key, const std::string& raw) {
  std::istringstream is(raw);
  T v{};
  if constexpr (std::is_same_v<T, bool>) {
    if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
    if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
    throw ValidationError("config: " + key + " = '" + raw + "' is not a boolean");
  } else {
    if (!raw.empty() && raw.front() == '-' && std::is_unsigned_v<T>) {
      throw ValidationError("config: " + key + " = '" + raw + "' must be non-negative");
    }
    is >> v;
    if (!is || !(is >> std::ws).eof()) throw ValidationError("config: " + key + " = '" + raw + "' is not valid");
    return v;
  }
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& raw) {
  std::vector<T> out;
  for (const auto& item : split_list(raw)) out.push_back(parse_value<T>(key, item));
  return out;
}

/// Shortest decimal form that reads back to the same double.
inline std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    if constexpr (std::is_same_v<T, bool>) {
      os << (v[i] ? "true" : "false");
    } else if constexpr (std::is_floating_point_v<T>) {
      os << num(v[i]);
    } else {
      os << v[i];
    }
  }
  return os.str();
}

// Per-level list with broadcast of a single value.
template <class T>
std::vector<T> per_level(const std::string& key, const std::string& raw, std::size_t levels) {
  auto v = parse_list<T>(key, raw);
  if (v.size() == 1) v.assign(levels, v.front());
  if (v.size() != levels) {
    throw ValidationError("config: " + key + " lists " + std::to_string(v.size()) + " values but there are " +
                          std::to_string(levels) + " levels");
  }
  return v;
}

}  // namespace detail

/// Reads the flat sectioned key/value format. Unknown sections or keys are
/// rejected so typos surface before any compute.
inline RunConfig parse_run_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  static const std::map<std::string, std::set<std::string>> known = {
      {"data",
       {"name", "path", "registry", "frequency", "max_rows", "train_ratio", "val_ratio", "test_ratio",
        "sinusoid_steps", "sinusoid_variables", "sinusoid_noise"}},
      {"model",
       {"input_length", "horizon", "hidden_dim", "block_sizes", "enable_interact", "enable_denoise",
        "memory_capacity", "top_k", "activation", "time_feature_dim"}},
      {"train",
       {"learning_rate", "batch_size", "max_epochs", "patience", "ablation", "max_batches_per_epoch",
        "max_eval_windows"}},
      {"noise", {"settings", "probabilities"}},
      {"memsweep", {"configs"}},
      {"run", {"seed", "seeds", "horizons", "out", "jobs"}},
  };
  for (const auto& [section, body] : tree) {
    auto it = known.find(section);
    if (it == known.end()) throw ValidationError("config: unknown section [" + section + "]");
    if (body.empty() && !body.data().empty()) throw ValidationError("config: key '" + section + "' outside a section");
    for (const auto& [key, _] : body) {
      if (!it->second.count(key)) throw ValidationError("config: unknown key '" + key + "' in [" + section + "]");
    }
  }
  auto get = [&tree](const std::string& path) -> std::optional<std::string> {
    if (auto v = tree.get_optional<std::string>(path)) return *v;
    return std::nullopt;
  };
  using detail::parse_value;

  RunConfig c;
  if (auto v = get("data.name")) c.data.name = *v;
  if (auto v = get("data.path")) c.data.path = *v;
  if (auto v = get("data.registry")) c.data.registry = *v;
  if (auto v = get("data.frequency")) c.data.frequency = *v;
  if (auto v = get("data.max_rows")) c.data.max_rows = parse_value<std::size_t>("data.max_rows", *v);
  {
    auto tr = get("data.train_ratio"), va = get("data.val_ratio"), te = get("data.test_ratio");
    if (tr || va || te) {
      if (!(tr && va && te)) throw ValidationError("config: give all of train_ratio, val_ratio, test_ratio or none");
      c.data.ratios = SplitRatios{parse_value<double>("data.train_ratio", *tr), parse_value<double>("data.val_ratio", *va),
                                  parse_value<double>("data.test_ratio", *te)};
    }
  }
  if (auto v = get("data.sinusoid_steps")) c.data.sinusoid_steps = parse_value<std::size_t>("data.sinusoid_steps", *v);
  if (auto v = get("data.sinusoid_variables")) {
    c.data.sinusoid_variables = parse_value<std::size_t>("data.sinusoid_variables", *v);
  }
  if (auto v = get("data.sinusoid_noise")) c.data.sinusoid_noise = parse_value<double>("data.sinusoid_noise", *v);

  auto& m = c.model;
  if (auto v = get("model.input_length")) m.input_length = parse_value<std::size_t>("model.input_length", *v);
  if (auto v = get("model.horizon")) m.horizon = parse_value<std::size_t>("model.horizon", *v);
  if (auto v = get("model.hidden_dim")) m.hidden_dim = parse_value<std::size_t>("model.hidden_dim", *v);
  if (auto v = get("model.time_feature_dim")) {
    m.time_feature_dim = parse_value<std::size_t>("model.time_feature_dim", *v);
    if (m.time_feature_dim != kTimeFeatureDim) {
      throw ValidationError("config: model.time_feature_dim must be " + std::to_string(kTimeFeatureDim));
    }
  }
  if (auto v = get("model.activation")) m.activation = parse_activation(*v);
  if (auto v = get("model.block_sizes")) {
    const auto sizes = detail::parse_list<std::size_t>("model.block_sizes", *v);
    if (sizes.empty()) throw ValidationError("config: model.block_sizes is empty");
    m.levels.assign(sizes.size(), LevelConfig{});
    for (std::size_t i = 0; i < sizes.size(); ++i) m.levels[i].block_size = sizes[i];
  }
  const std::size_t n_levels = m.levels.size();
  if (auto v = get("model.enable_interact")) {
    const auto f = detail::per_level<bool>("model.enable_interact", *v, n_levels);
    for (std::size_t i = 0; i < n_levels; ++i) m.levels[i].enable_interact = f[i];
  }
  if (auto v = get("model.enable_denoise")) {
    const auto f = detail::per_level<bool>("model.enable_denoise", *v, n_levels);
    for (std::size_t i = 0; i < n_levels; ++i) m.levels[i].enable_denoise = f[i];
  }
  if (auto v = get("model.memory_capacity")) {
    const auto f = detail::per_level<std::size_t>("model.memory_capacity", *v, n_levels);
    for (std::size_t i = 0; i < n_levels; ++i) m.levels[i].memory_capacity = f[i];
  }
  if (auto v = get("model.top_k")) {
    const auto f = detail::per_level<std::size_t>("model.top_k", *v, n_levels);
    for (std::size_t i = 0; i < n_levels; ++i) m.levels[i].top_k = f[i];
  }

  auto& t = c.train;
  if (auto v = get("train.learning_rate")) t.learning_rate = parse_value<double>("train.learning_rate", *v);
  if (auto v = get("train.batch_size")) t.batch_size = parse_value<std::size_t>("train.batch_size", *v);
  if (auto v = get("train.max_epochs")) t.max_epochs = parse_value<std::size_t>("train.max_epochs", *v);
  if (auto v = get("train.patience")) t.patience = parse_value<std::size_t>("train.patience", *v);
  if (auto v = get("train.ablation")) t.ablation = parse_ablation(*v);
  if (auto v = get("train.max_batches_per_epoch")) {
    t.max_batches_per_epoch = parse_value<std::size_t>("train.max_batches_per_epoch", *v);
  }
  if (auto v = get("train.max_eval_windows")) t.max_eval_windows = parse_value<std::size_t>("train.max_eval_windows", *v);

  if (auto v = get("noise.settings")) {
    c.noise.settings.clear();
    for (const auto& s : detail::split_list(*v)) c.noise.settings.push_back(parse_noise_setting(s));
  }
  if (auto v = get("noise.probabilities")) c.noise.probabilities = detail::parse_list<double>("noise.probabilities", *v);

  if (auto v = get("memsweep.configs")) {
    c.memory_configs.clear();
    for (const auto& item : detail::split_list(*v)) {
      const auto parts = detail::split_list(item, ':');
      if (parts.size() != 2) throw ValidationError("config: memsweep entry '" + item + "' is not M:K");
      c.memory_configs.push_back({parse_value<std::size_t>("memsweep.configs", parts[0]),
                                  parse_value<std::size_t>("memsweep.configs", parts[1])});
    }
  }

  if (auto v = get("run.seed")) t.seed = parse_value<std::uint64_t>("run.seed", *v);
  if (auto v = get("run.seeds")) c.seeds = detail::parse_list<std::uint64_t>("run.seeds", *v);
  if (auto v = get("run.horizons")) c.horizons = detail::parse_list<std::size_t>("run.horizons", *v);
  if (auto v = get("run.out")) c.out = *v;
  if (auto v = get("run.jobs")) c.jobs = parse_value<std::size_t>("run.jobs", *v);
  m.seed = t.seed;
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config '" + path + "'");
  return parse_run_config(in);
}

// ---------------------------------------------------------------------------
// Dataset registry: one section per dataset with path, frequency, ratios.

struct RegistryEntry {
  std::string path;
  std::string frequency;
  std::optional<SplitRatios> ratios;
  std::size_t max_rows = 0;
};

/// Relative paths are resolved against `base_dir`.
inline std::map<std::string, RegistryEntry> parse_registry(std::istream& in, const std::filesystem::path& base_dir = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(std::string("registry: ") + e.what());
  }
  std::map<std::string, RegistryEntry> out;
  for (const auto& [name, body] : tree) {
    RegistryEntry e;
    for (const auto& [key, value] : body) {
      const auto raw = value.data();
      if (key == "path") {
        std::filesystem::path p(raw);
        e.path = (p.is_relative() && !base_dir.empty() ? base_dir / p : p).string();
      } else if (key == "frequency") {
        e.frequency = raw;
      } else if (key == "ratios") {
        const auto v = detail::parse_list<double>(name + ".ratios", raw);
        if (v.size() != 3) throw ValidationError("registry: " + name + ".ratios needs three values");
        e.ratios = SplitRatios{v[0], v[1], v[2]};
      } else if (key == "max_rows") {
        e.max_rows = detail::parse_value<std::size_t>(name + ".max_rows", raw);
      } else {
        throw ValidationError("registry: unknown key '" + key + "' for dataset " + name);
      }
    }
    if (e.path.empty()) throw ValidationError("registry: dataset " + name + " has no path");
    out[name] = e;
  }
  return out;
}

/// Fills path, frequency, ratios and row limit from the registry when the
/// config names one; explicit config values win.
inline DataRef resolve_data_ref(DataRef ref) {
  if (ref.registry.empty()) return ref;
  std::ifstream in(ref.registry);
  if (!in) throw ValidationError("cannot open registry '" + ref.registry + "'");
  const auto reg = parse_registry(in, std::filesystem::path(ref.registry).parent_path());
  auto it = reg.find(ref.name);
  if (it == reg.end()) throw ValidationError("registry '" + ref.registry + "' has no dataset '" + ref.name + "'");
  if (ref.path.empty()) ref.path = it->second.path;
  if (ref.frequency.empty()) ref.frequency = it->second.frequency;
  if (!ref.ratios) ref.ratios = it->second.ratios;
  if (ref.max_rows == 0) ref.max_rows = it->second.max_rows;
  return ref;
}

inline TimeSeriesDataset load_dataset(const DataRef& raw) {
  const DataRef ref = resolve_data_ref(raw);
  if (ref.path.empty()) {
    if (ref.name != "sinusoid") throw ValidationError("dataset '" + ref.name + "' has no path");
    return make_sinusoid_dataset(ref.sinusoid_steps, ref.sinusoid_variables, 0, ref.sinusoid_noise);
  }
  const std::size_t rows = ref.max_rows ? ref.max_rows : default_max_rows(ref.name);
  auto ds = load_csv(ref.path, CsvSchema{ref.frequency, rows}, ref.name);
  ds.name = ref.name;
  return ds;
}

inline SplitRatios ratios_for(const DataRef& ref) {
  return resolve_data_ref(ref).ratios.value_or(default_ratios(ref.name));
}

/// ExperimentSetup for a config, with the dataset loaded.
inline ExperimentSetup make_setup(const RunConfig& c) {
  ExperimentSetup s;
  s.data = load_dataset(c.data);
  s.ratios = ratios_for(c.data);
  s.model = c.model;
  s.model.num_variables = s.data.values.cols;
  s.train = c.train;
  s.seeds = c.seed_list();
  s.jobs = c.jobs;
  return s;
}

/// Every setting with defaults materialized; parse_run_config(to_ini(c))
/// reproduces `c`.
inline std::string to_ini(const RunConfig& c) {
  std::ostringstream os;
  const auto& m = c.model;
  std::vector<std::size_t> blocks, caps, ks;
  std::vector<bool> interact, denoise;
  for (const auto& l : m.levels) {
    blocks.push_back(l.block_size);
    caps.push_back(l.memory_capacity);
    ks.push_back(l.top_k);
    interact.push_back(l.enable_interact);
    denoise.push_back(l.enable_denoise);
  }
  os << "[data]\n"
     << "name = " << c.data.name << "\n"
     << "path = " << c.data.path << "\n"
     << "registry = " << c.data.registry << "\n"
     << "frequency = " << c.data.frequency << "\n"
     << "max_rows = " << (c.data.max_rows ? c.data.max_rows : default_max_rows(c.data.name)) << "\n";
  const SplitRatios r = ratios_for(c.data);
  os << "train_ratio = " << detail::num(r.train) << "\n"
     << "val_ratio = " << detail::num(r.val) << "\n"
     << "test_ratio = " << detail::num(r.test) << "\n"
     << "sinusoid_steps = " << c.data.sinusoid_steps << "\n"
     << "sinusoid_variables = " << c.data.sinusoid_variables << "\n"
     << "sinusoid_noise = " << detail::num(c.data.sinusoid_noise) << "\n\n";
  os << "[model]\n"
     << "input_length = " << m.input_length << "\n"
     << "horizon = " << m.horizon << "\n"
     << "hidden_dim = " << m.hidden_dim << "\n"
     << "time_feature_dim = " << m.time_feature_dim << "\n"
     << "activation = " << activation_name(m.activation) << "\n"
     << "block_sizes = " << detail::join(blocks) << "\n"
     << "enable_interact = " << detail::join(interact) << "\n"
     << "enable_denoise = " << detail::join(denoise) << "\n"
     << "memory_capacity = " << detail::join(caps) << "\n"
     << "top_k = " << detail::join(ks) << "\n\n";
  const auto& t = c.train;
  os << "[train]\n"
     << "learning_rate = " << detail::num(t.learning_rate) << "\n"
     << "batch_size = " << t.batch_size << "\n"
     << "max_epochs = " << t.max_epochs << "\n"
     << "patience = " << t.patience << "\n"
     << "ablation = " << ablation_name(t.ablation) << "\n"
     << "max_batches_per_epoch = " << t.max_batches_per_epoch << "\n"
     << "max_eval_windows = " << t.max_eval_windows << "\n\n";
  std::vector<std::string> settings;
  for (auto s : c.noise.settings) settings.push_back(noise_setting_name(s));
  os << "[noise]\n"
     << "settings = " << detail::join(settings) << "\n"
     << "probabilities = " << detail::join(c.noise.probabilities) << "\n\n";
  std::vector<std::string> mem;
  for (const auto& mc : c.memory_configs) mem.push_back(std::to_string(mc.capacity) + ":" + std::to_string(mc.top_k));
  os << "[memsweep]\n"
     << "configs = " << detail::join(mem) << "\n\n";
  os << "[run]\n"
     << "seed = " << t.seed << "\n"
     << "seeds = " << detail::join(c.seed_list()) << "\n"
     << "horizons = " << detail::join(c.horizon_list()) << "\n"
     << "out = " << c.out << "\n"
     << "jobs = " << c.jobs << "\n";
  return os.str();
}

}  // namespace hmnet
