#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hmnet/error.hpp"
#include "hmnet/pattern_memory.hpp"
#include "hmnet/tensor.hpp"

namespace hmnet {

/// Row-major rows x cols matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return std::span<const double>(data).subspan(r * cols, cols); }
  bool operator==(const Matrix&) const = default;
};

// ---------------------------------------------------------------------------
// Timestamps

struct Timestamp {
  int year = 1970;
  unsigned month = 1;   // 1..12
  unsigned day = 1;     // 1..31
  unsigned hour = 0;
  unsigned minute = 0;
  unsigned second = 0;

  std::int64_t epoch_seconds() const {
    using namespace std::chrono;
    const sys_days days{year_month_day{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}}};
    return std::int64_t(days.time_since_epoch().count()) * 86400 + hour * 3600 + minute * 60 + second;
  }

  /// 0 = Monday ... 6 = Sunday.
  unsigned weekday() const {
    using namespace std::chrono;
    const sys_days days{year_month_day{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}}};
    return std::chrono::weekday{days}.iso_encoding() - 1;
  }

  static Timestamp from_epoch(std::int64_t secs) {
    using namespace std::chrono;
    std::int64_t days = secs >= 0 ? secs / 86400 : -((-secs + 86399) / 86400);
    std::int64_t rem = secs - days * 86400;
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    Timestamp t;
    t.year = int(ymd.year());
    t.month = unsigned(ymd.month());
    t.day = unsigned(ymd.day());
    t.hour = unsigned(rem / 3600);
    t.minute = unsigned((rem % 3600) / 60);
    t.second = unsigned(rem % 60);
    return t;
  }

  std::string str() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02u:%02u:%02u", year, month, day, hour, minute, second);
    return buf;
  }
};

/// Parses "YYYY-MM-DD[ HH:MM[:SS]]"; '/' is accepted as the date separator
/// and fields may have a single digit.
inline std::optional<Timestamp> parse_timestamp(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '"' || s.back() == '\r')) s.remove_suffix(1);
  std::array<long, 6> f{1970, 1, 1, 0, 0, 0};
  std::size_t field = 0;
  const char* p = s.data();
  const char* end = s.data() + s.size();
  while (p < end && field < 6) {
    long v = 0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc{} || next == p) return std::nullopt;
    f[field++] = v;
    p = next;
    if (p == end) break;
    const char sep = *p;
    const bool ok = (field < 3 && (sep == '-' || sep == '/')) || (field == 3 && (sep == ' ' || sep == 'T')) ||
                    (field > 3 && sep == ':');
    if (!ok) return std::nullopt;
    ++p;
  }
  if (p != end || field < 3) return std::nullopt;
  Timestamp t{int(f[0]), unsigned(f[1]), unsigned(f[2]), unsigned(f[3]), unsigned(f[4]), unsigned(f[5])};
  const std::chrono::year_month_day ymd{std::chrono::year{t.year}, std::chrono::month{t.month}, std::chrono::day{t.day}};
  if (!ymd.ok() || t.hour > 23 || t.minute > 59 || t.second > 59) return std::nullopt;
  return t;
}

/// Seconds per step for tags like "15min", "10min", "h", "d", "30s".
inline std::int64_t frequency_seconds(const std::string& tag) {
  std::size_t i = 0;
  while (i < tag.size() && std::isdigit(static_cast<unsigned char>(tag[i]))) ++i;
  const std::int64_t mult = i ? std::stoll(tag.substr(0, i)) : 1;
  const std::string unit = tag.substr(i);
  if (unit == "s") return mult;
  if (unit == "min" || unit == "t" || unit == "T") return mult * 60;
  if (unit == "h" || unit == "H") return mult * 3600;
  if (unit == "d" || unit == "D") return mult * 86400;
  throw ValidationError("unknown frequency tag '" + tag + "'");
}

inline std::string frequency_tag(std::int64_t seconds) {
  if (seconds % 86400 == 0) return seconds == 86400 ? "d" : std::to_string(seconds / 86400) + "d";
  if (seconds % 3600 == 0) return seconds == 3600 ? "h" : std::to_string(seconds / 3600) + "h";
  if (seconds % 60 == 0) return std::to_string(seconds / 60) + "min";
  return std::to_string(seconds) + "s";
}

inline constexpr std::size_t kTimeFeatureDim = 5;

/// Month, day-of-month, weekday, hour, minute, each mapped to [-0.5, 0.5].
inline Matrix time_features(std::span<const Timestamp> stamps) {
  Matrix out(stamps.size(), kTimeFeatureDim);
  for (std::size_t i = 0; i < stamps.size(); ++i) {
    const auto& t = stamps[i];
    out(i, 0) = (double(t.month) - 1.0) / 11.0 - 0.5;
    out(i, 1) = (double(t.day) - 1.0) / 30.0 - 0.5;
    out(i, 2) = double(t.weekday()) / 6.0 - 0.5;
    out(i, 3) = double(t.hour) / 23.0 - 0.5;
    out(i, 4) = double(t.minute) / 59.0 - 0.5;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ingestion

struct TimeSeriesDataset {
  std::string name;
  Matrix values;  // T_total x N
  std::vector<Timestamp> timestamps;
  std::vector<std::string> variable_names;
  std::string frequency;
};

struct CsvSchema {
  std::string frequency;     // empty: inferred from the first step
  std::size_t max_rows = 0;  // 0: keep every row
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::optional<double> parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '"' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string join_lines(const std::vector<std::size_t>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size() && i < 20; ++i) out += (i ? ", " : "") + std::to_string(lines[i]);
  if (lines.size() > 20) out += ", ...";
  return out;
}

}  // namespace detail

/// Reads a CSV whose header starts with `date`. Every other column is a
/// numeric variable, kept in file order. Rejects unparseable rows (listing
/// their line numbers), non-increasing timestamps and spacing gaps.
inline TimeSeriesDataset load_csv(std::istream& in, const CsvSchema& schema = {}, std::string name = "dataset") {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(name + ": empty file");
  auto header = detail::split_csv_line(line);
  auto trim = [](std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '"' || s.front() == '\xEF' || s.front() == '\xBB' || s.front() == '\xBF')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '"' || s.back() == '\r')) s.remove_suffix(1);
    return std::string(s);
  };
  if (header.size() < 2 || trim(header[0]) != "date") {
    throw ValidationError(name + ": header must start with a 'date' column followed by at least one variable");
  }
  TimeSeriesDataset ds;
  ds.name = std::move(name);
  for (std::size_t i = 1; i < header.size(); ++i) ds.variable_names.push_back(trim(header[i]));
  const std::size_t n = ds.variable_names.size();

  std::vector<double> values;
  std::vector<std::size_t> bad;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (schema.max_rows && ds.timestamps.size() >= schema.max_rows) break;
    const auto cells = detail::split_csv_line(line);
    auto ts = cells.empty() ? std::nullopt : parse_timestamp(cells[0]);
    bool ok = ts && cells.size() == n + 1;
    std::vector<double> row;
    for (std::size_t i = 1; ok && i < cells.size(); ++i) {
      auto v = detail::parse_number(cells[i]);
      ok = v.has_value();
      if (ok) row.push_back(*v);
    }
    if (!ok) {
      bad.push_back(line_no);
      continue;
    }
    ds.timestamps.push_back(*ts);
    values.insert(values.end(), row.begin(), row.end());
  }
  if (!bad.empty()) {
    throw ValidationError(ds.name + ": " + std::to_string(bad.size()) + " unparseable row(s) at line(s) " +
                          detail::join_lines(bad));
  }
  if (ds.timestamps.empty()) throw ValidationError(ds.name + ": no data rows");

  std::int64_t step = 0;
  if (!schema.frequency.empty()) {
    step = frequency_seconds(schema.frequency);
  } else if (ds.timestamps.size() > 1) {
    step = ds.timestamps[1].epoch_seconds() - ds.timestamps[0].epoch_seconds();
  }
  std::vector<std::size_t> gaps;
  for (std::size_t i = 1; i < ds.timestamps.size(); ++i) {
    const auto dt = ds.timestamps[i].epoch_seconds() - ds.timestamps[i - 1].epoch_seconds();
    if (dt <= 0) {
      throw ValidationError(ds.name + ": timestamps not strictly increasing at data row " + std::to_string(i) + " (" +
                            ds.timestamps[i].str() + ")");
    }
    if (dt != step) gaps.push_back(i);
  }
  if (!gaps.empty()) {
    throw ValidationError(ds.name + ": " + std::to_string(gaps.size()) + " gap(s) in the " + frequency_tag(step) +
                          " grid at data row(s) " + detail::join_lines(gaps));
  }
  ds.frequency = step ? frequency_tag(step) : schema.frequency;
  ds.values = Matrix(ds.timestamps.size(), n);
  ds.values.data = std::move(values);
  return ds;
}

inline TimeSeriesDataset load_csv(const std::string& path, const CsvSchema& schema = {}, std::string name = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return load_csv(in, schema, name.empty() ? path : std::move(name));
}

/// Four-variable sum-of-sinusoids series on an hourly grid, with optional
/// Gaussian observation noise. Used as the learnable toy benchmark.
inline TimeSeriesDataset make_sinusoid_dataset(std::size_t steps = 2000, std::size_t vars = 4, std::uint64_t seed = 0,
                                               double noise_std = 0.0) {
  TimeSeriesDataset ds;
  ds.name = "sinusoid";
  ds.frequency = "h";
  ds.values = Matrix(steps, vars);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Timestamp origin{2016, 7, 1, 0, 0, 0};
  const double periods[] = {24.0, 48.0, 32.0, 16.0, 12.0, 96.0, 8.0, 64.0};
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t n = 0; n < vars; ++n) ds.variable_names.push_back("s" + std::to_string(n));
  for (std::size_t t = 0; t < steps; ++t) {
    ds.timestamps.push_back(Timestamp::from_epoch(origin.epoch_seconds() + std::int64_t(t) * 3600));
    for (std::size_t n = 0; n < vars; ++n) {
      const double p = periods[n % 8];
      const double phase = 0.7 * double(n);
      double v = std::sin(two_pi * double(t) / p + phase) + 0.5 * std::sin(2.0 * two_pi * double(t) / p + 2.0 * phase);
      if (noise_std > 0.0) v += noise_std * noise(rng);
      ds.values(t, n) = v;
    }
  }
  return ds;
}

/// ETT files are cut to their first 20 months (12 train, 4 val, 4 test);
/// 0 means no limit.
inline std::size_t default_max_rows(const std::string& dataset_name) {
  if (dataset_name.rfind("ETTm", 0) == 0) return 20 * 30 * 24 * 4;
  if (dataset_name.rfind("ETTh", 0) == 0) return 20 * 30 * 24;
  return 0;
}

// ---------------------------------------------------------------------------
// Windows

enum class Split { train = 0, val = 1, test = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

/// ETT-family datasets use 0.6/0.2/0.2, everything else 0.7/0.1/0.2.
inline SplitRatios default_ratios(const std::string& dataset_name) {
  if (dataset_name.rfind("ETT", 0) == 0) return {0.6, 0.2, 0.2};
  return {};
}

/// Standardized series plus stride-1 window start indices per split.
///
/// Window i of a split reads input rows [s, s+T) and target rows
/// [s+T, s+T+H) with s = starts[split][i]. Targets lie inside their own split;
/// val/test inputs may reach back into the preceding region.
struct WindowDataset {
  std::string name;
  Matrix series;      // standardized, T_total x N
  Matrix time_feats;  // T_total x F
  std::vector<Timestamp> timestamps;
  std::vector<std::string> variable_names;
  std::vector<double> mean;   // train-split statistics, per variable
  std::vector<double> stdev;
  std::size_t input_length = 0;
  std::size_t horizon = 0;
  std::array<std::size_t, 4> borders{};  // [0, n_train, n_train + n_val, T_total]
  std::array<std::vector<std::size_t>, 3> starts;

  std::size_t num_variables() const { return series.cols; }
  std::size_t count(Split s) const { return starts[std::size_t(s)].size(); }
  std::size_t start(Split s, std::size_t i) const { return starts[std::size_t(s)][i]; }

  /// Input window (T x N) of window i.
  Matrix input(Split s, std::size_t i) const {
    Matrix m(input_length, num_variables());
    const std::size_t s0 = start(s, i);
    std::copy(series.data.begin() + std::ptrdiff_t(s0 * series.cols),
              series.data.begin() + std::ptrdiff_t((s0 + input_length) * series.cols), m.data.begin());
    return m;
  }

  /// Target window (H x N) of window i.
  Matrix target(Split s, std::size_t i) const {
    Matrix m(horizon, num_variables());
    const std::size_t s0 = start(s, i) + input_length;
    std::copy(series.data.begin() + std::ptrdiff_t(s0 * series.cols),
              series.data.begin() + std::ptrdiff_t((s0 + horizon) * series.cols), m.data.begin());
    return m;
  }
};

/// Chronological split, z-score with train-region statistics, and stride-1
/// window enumeration.
inline WindowDataset split_and_standardize(const TimeSeriesDataset& ds, SplitRatios ratios, std::size_t input_length,
                                           std::size_t horizon) {
  const double total_ratio = ratios.train + ratios.val + ratios.test;
  if (std::abs(total_ratio - 1.0) > 1e-9 || ratios.train <= 0 || ratios.val < 0 || ratios.test < 0) {
    throw ValidationError("split ratios must be non-negative and sum to 1");
  }
  const std::size_t total = ds.values.rows;
  const std::size_t n_train = static_cast<std::size_t>(std::floor(double(total) * ratios.train + 1e-9));
  const std::size_t n_test = static_cast<std::size_t>(std::floor(double(total) * ratios.test + 1e-9));
  const std::size_t n_val = total - n_train - n_test;
  if (n_train < input_length + horizon || n_val < horizon || n_test < horizon) {
    throw ValidationError(ds.name + ": split sizes " + std::to_string(n_train) + "/" + std::to_string(n_val) + "/" +
                          std::to_string(n_test) + " too short for input " + std::to_string(input_length) +
                          " + horizon " + std::to_string(horizon));
  }
  WindowDataset w;
  w.name = ds.name;
  w.input_length = input_length;
  w.horizon = horizon;
  w.timestamps = ds.timestamps;
  w.variable_names = ds.variable_names;
  w.borders = {0, n_train, n_train + n_val, total};
  const std::size_t n = ds.values.cols;
  w.mean.assign(n, 0.0);
  w.stdev.assign(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < n_train; ++r) m += ds.values(r, c);
    m /= double(n_train);
    double v = 0.0;
    for (std::size_t r = 0; r < n_train; ++r) v += (ds.values(r, c) - m) * (ds.values(r, c) - m);
    const double sd = std::sqrt(v / double(n_train));
    w.mean[c] = m;
    w.stdev[c] = sd > 0.0 ? sd : 1.0;
  }
  w.series = Matrix(total, n);
  for (std::size_t r = 0; r < total; ++r)
    for (std::size_t c = 0; c < n; ++c) w.series(r, c) = (ds.values(r, c) - w.mean[c]) / w.stdev[c];
  w.time_feats = time_features(ds.timestamps);
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t lo = w.borders[k], hi = w.borders[k + 1];
    // First target row must be >= lo; input starts may precede lo except in train.
    const std::size_t first = k == 0 ? 0 : lo - input_length;
    for (std::size_t s = first; s + input_length + horizon <= hi; ++s) w.starts[k].push_back(s);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Decomposition and noise

/// Centered moving-average trend with edge replication, and the residual.
inline std::pair<Matrix, Matrix> decompose(const Matrix& x, std::size_t kernel = 25) {
  Matrix trend(x.rows, x.cols), residual(x.rows, x.cols);
  const std::ptrdiff_t half = std::ptrdiff_t(kernel - 1) / 2;
  const std::ptrdiff_t last = std::ptrdiff_t(x.rows) - 1;
  for (std::size_t c = 0; c < x.cols; ++c) {
    for (std::ptrdiff_t t = 0; t <= last; ++t) {
      double acc = 0.0;
      for (std::ptrdiff_t j = t - half; j < t - half + std::ptrdiff_t(kernel); ++j) {
        acc += x(std::size_t(std::clamp<std::ptrdiff_t>(j, 0, last)), c);
      }
      trend(std::size_t(t), c) = acc / double(kernel);
      residual(std::size_t(t), c) = x(std::size_t(t), c) - trend(std::size_t(t), c);
    }
  }
  return {std::move(trend), std::move(residual)};
}

enum class NoiseSetting { residual_only, trend_and_residual };

inline std::string noise_setting_name(NoiseSetting s) {
  return s == NoiseSetting::residual_only ? "residual" : "trend_residual";
}

inline NoiseSetting parse_noise_setting(const std::string& s) {
  if (s == "residual" || s == "residual_only" || s == "1") return NoiseSetting::residual_only;
  if (s == "trend_residual" || s == "trend_and_residual" || s == "2") return NoiseSetting::trend_and_residual;
  throw ValidationError("unknown noise setting '" + s + "'");
}

struct NoiseSpec {
  NoiseSetting setting = NoiseSetting::residual_only;
  double mean = 0.0;
  double stdev = 1.0;
  double probability = 0.0;
  std::uint64_t seed = 0;

  /// The two perturbation regimes of the robustness study.
  static NoiseSpec standard(NoiseSetting s, double p, std::uint64_t seed = 0) {
    return {s, s == NoiseSetting::residual_only ? 0.0 : 1.0, 1.0, p, seed};
  }

  void validate() const {
    if (probability < 0.0 || probability > 1.0) throw ValidationError("noise probability must lie in [0, 1]");
    if (stdev < 0.0) throw ValidationError("noise std must be >= 0");
  }
};

/// Perturbs an input window (T x N). Each time step is selected with the
/// spec's probability; a selected step gets an independent N(mean, std^2)
/// draw per variable added to its residual and, for trend_and_residual, a
/// second independent draw added to its trend. Unselected steps are returned
/// bit-for-bit. `perturbed_steps` (optional) receives the selected count.
inline Matrix inject_noise(const Matrix& window, const NoiseSpec& spec, std::mt19937_64& rng,
                           std::size_t* perturbed_steps = nullptr) {
  Matrix out = window;
  if (perturbed_steps) *perturbed_steps = 0;
  if (spec.probability <= 0.0) return out;
  auto [trend, residual] = decompose(window);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> gauss(spec.mean, spec.stdev);
  for (std::size_t t = 0; t < window.rows; ++t) {
    if (coin(rng) >= spec.probability) continue;
    if (perturbed_steps) ++*perturbed_steps;
    for (std::size_t c = 0; c < window.cols; ++c) {
      double r = residual(t, c), tr = trend(t, c);
      if (spec.stdev > 0.0 || spec.mean != 0.0) {
        r += gauss(rng);
        if (spec.setting == NoiseSetting::trend_and_residual) tr += gauss(rng);
        out(t, c) = tr + r;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching

struct Batch {
  Tensor x;           // [B, T, N]
  Tensor time_feats;  // [B, T, F]
  Tensor target;      // [B, H, N]
};

/// Stacks windows `indices` of `split`. With `noise`, each input is perturbed
/// in order using `rng`; targets are never touched.
inline Batch make_batch(const WindowDataset& w, Split split, std::span<const std::size_t> indices,
                        const NoiseSpec* noise = nullptr, std::mt19937_64* rng = nullptr) {
  const std::size_t b = indices.size(), t_n = w.input_length, h_n = w.horizon, v_n = w.num_variables();
  const std::size_t f_n = w.time_feats.cols;
  std::vector<double> x(b * t_n * v_n), tf(b * t_n * f_n), y(b * h_n * v_n);
  for (std::size_t k = 0; k < b; ++k) {
    const std::size_t s0 = w.start(split, indices[k]);
    if (noise && noise->probability > 0.0) {
      const Matrix noisy = inject_noise(w.input(split, indices[k]), *noise, *rng);
      std::copy(noisy.data.begin(), noisy.data.end(), x.begin() + std::ptrdiff_t(k * t_n * v_n));
    } else {
      std::copy(w.series.data.begin() + std::ptrdiff_t(s0 * v_n), w.series.data.begin() + std::ptrdiff_t((s0 + t_n) * v_n),
                x.begin() + std::ptrdiff_t(k * t_n * v_n));
    }
    std::copy(w.time_feats.data.begin() + std::ptrdiff_t(s0 * f_n),
              w.time_feats.data.begin() + std::ptrdiff_t((s0 + t_n) * f_n), tf.begin() + std::ptrdiff_t(k * t_n * f_n));
    std::copy(w.series.data.begin() + std::ptrdiff_t((s0 + t_n) * v_n),
              w.series.data.begin() + std::ptrdiff_t((s0 + t_n + h_n) * v_n), y.begin() + std::ptrdiff_t(k * h_n * v_n));
  }
  return {Tensor({b, t_n, v_n}, std::move(x)), Tensor({b, t_n, f_n}, std::move(tf)), Tensor({b, h_n, v_n}, std::move(y))};
}

// ---------------------------------------------------------------------------
// Window cache

inline constexpr std::array<char, 4> kWindowCacheMagic{'H', 'M', 'N', 'W'};
inline constexpr std::uint32_t kWindowCacheVersion = 1;

/// Versioned little-endian dump of a WindowDataset.
inline void write_window_cache(std::ostream& os, const WindowDataset& w) {
  using PM = PatternMemory;
  os.write(kWindowCacheMagic.data(), 4);
  PM::write_u32(os, kWindowCacheVersion);
  auto write_str = [&os](const std::string& s) {
    PM::write_u64(os, s.size());
    os.write(s.data(), std::streamsize(s.size()));
  };
  write_str(w.name);
  for (std::uint64_t v : {std::uint64_t(w.series.rows), std::uint64_t(w.series.cols), std::uint64_t(w.time_feats.cols),
                          std::uint64_t(w.input_length), std::uint64_t(w.horizon)}) {
    PM::write_u64(os, v);
  }
  for (auto b : w.borders) PM::write_u64(os, b);
  for (const auto& n : w.variable_names) write_str(n);
  for (const auto& t : w.timestamps) PM::write_u64(os, std::uint64_t(t.epoch_seconds()));
  for (double v : w.mean) PM::write_f64(os, v);
  for (double v : w.stdev) PM::write_f64(os, v);
  for (double v : w.series.data) PM::write_f64(os, v);
  for (double v : w.time_feats.data) PM::write_f64(os, v);
  if (!os) throw RuntimeFailure("window cache: write failed");
}

inline WindowDataset read_window_cache(std::istream& is) {
  using PM = PatternMemory;
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (!is || magic != kWindowCacheMagic) throw ValidationError("window cache: bad magic");
  if (PM::read_u32(is) != kWindowCacheVersion) throw ValidationError("window cache: unsupported version");
  auto read_str = [&is] {
    const auto len = PM::read_u64(is);
    if (len > (1u << 20)) throw ValidationError("window cache: corrupt string length");
    std::string s(len, '\0');
    is.read(s.data(), std::streamsize(len));
    return s;
  };
  WindowDataset w;
  w.name = read_str();
  const auto rows = PM::read_u64(is), cols = PM::read_u64(is), fcols = PM::read_u64(is);
  w.input_length = PM::read_u64(is);
  w.horizon = PM::read_u64(is);
  for (auto& b : w.borders) b = PM::read_u64(is);
  if (!is || cols == 0 || rows != w.borders[3] || rows > (1ull << 32)) throw ValidationError("window cache: corrupt header");
  for (std::size_t i = 0; i < cols; ++i) w.variable_names.push_back(read_str());
  for (std::size_t i = 0; i < rows; ++i) w.timestamps.push_back(Timestamp::from_epoch(std::int64_t(PM::read_u64(is))));
  w.mean.resize(cols);
  w.stdev.resize(cols);
  for (auto& v : w.mean) v = PM::read_f64(is);
  for (auto& v : w.stdev) v = PM::read_f64(is);
  w.series = Matrix(rows, cols);
  w.time_feats = Matrix(rows, fcols);
  for (auto& v : w.series.data) v = PM::read_f64(is);
  for (auto& v : w.time_feats.data) v = PM::read_f64(is);
  if (!is) throw ValidationError("window cache: truncated file");
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t lo = w.borders[k], hi = w.borders[k + 1];
    const std::size_t first = k == 0 ? 0 : lo - w.input_length;
    for (std::size_t s = first; s + w.input_length + w.horizon <= hi; ++s) w.starts[k].push_back(s);
  }
  return w;
}

/// FNV-1a over a byte range; used to fingerprint cache files.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace hmnet
