#pragma once

#include <array>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "hmnet/model.hpp"

namespace hmnet {

inline constexpr std::array<char, 4> kCheckpointMagic{'H', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian): magic, version u32, config fields as u64, then per
// parameter its name, element count and float64 values, then one pattern
// memory snapshot per level.

inline void save_checkpoint(std::ostream& os, const HMNet& model) {
  using PM = PatternMemory;
  const auto& c = model.config();
  os.write(kCheckpointMagic.data(), 4);
  PM::write_u32(os, kCheckpointVersion);
  for (std::uint64_t v : {std::uint64_t(c.input_length), std::uint64_t(c.horizon), std::uint64_t(c.num_variables),
                          std::uint64_t(c.hidden_dim), std::uint64_t(c.time_feature_dim),
                          std::uint64_t(c.activation), c.seed, std::uint64_t(c.levels.size())}) {
    PM::write_u64(os, v);
  }
  for (const auto& l : c.levels) {
    for (std::uint64_t v : {std::uint64_t(l.block_size), std::uint64_t(l.enable_interact),
                            std::uint64_t(l.enable_denoise), std::uint64_t(l.memory_capacity),
                            std::uint64_t(l.top_k)}) {
      PM::write_u64(os, v);
    }
  }
  auto params = const_cast<HMNet&>(model).parameters();
  PM::write_u64(os, params.size());
  for (const auto* p : params) {
    PM::write_u64(os, p->name.size());
    os.write(p->name.data(), std::streamsize(p->name.size()));
    PM::write_u64(os, p->tensor.numel());
    for (double v : p->tensor.values()) PM::write_f64(os, v);
  }
  for (const auto& m : model.memories()) m.write(os);
  if (!os) throw RuntimeFailure("checkpoint: write failed");
}

inline HMNet load_checkpoint(std::istream& is) {
  using PM = PatternMemory;
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (!is || magic != kCheckpointMagic) throw ValidationError("checkpoint: bad magic");
  if (PM::read_u32(is) != kCheckpointVersion) throw ValidationError("checkpoint: unsupported version");
  HMNetConfig c;
  c.input_length = PM::read_u64(is);
  c.horizon = PM::read_u64(is);
  c.num_variables = PM::read_u64(is);
  c.hidden_dim = PM::read_u64(is);
  c.time_feature_dim = PM::read_u64(is);
  const auto act = PM::read_u64(is);
  if (act > std::uint64_t(Activation::identity)) throw ValidationError("checkpoint: bad activation");
  c.activation = Activation(act);
  c.seed = PM::read_u64(is);
  const auto n_levels = PM::read_u64(is);
  if (!is || n_levels == 0 || n_levels > 64) throw ValidationError("checkpoint: corrupt header");
  c.levels.resize(n_levels);
  for (auto& l : c.levels) {
    l.block_size = PM::read_u64(is);
    l.enable_interact = PM::read_u64(is) != 0;
    l.enable_denoise = PM::read_u64(is) != 0;
    l.memory_capacity = PM::read_u64(is);
    l.top_k = PM::read_u64(is);
  }
  if (!is) throw ValidationError("checkpoint: truncated header");
  HMNet model(c);
  auto params = model.parameters();
  if (PM::read_u64(is) != params.size()) throw ValidationError("checkpoint: parameter count mismatch");
  for (auto* p : params) {
    const auto len = PM::read_u64(is);
    if (len > 4096) throw ValidationError("checkpoint: corrupt parameter name");
    std::string name(len, '\0');
    is.read(name.data(), std::streamsize(len));
    if (name != p->name) throw ValidationError("checkpoint: expected parameter '" + p->name + "', found '" + name + "'");
    if (PM::read_u64(is) != p->tensor.numel()) throw ValidationError("checkpoint: size mismatch for " + name);
    for (auto& v : p->tensor.mutable_values()) v = PM::read_f64(is);
    if (!p->mask_holds()) throw ValidationError("checkpoint: masked entries of " + name + " are not zero");
  }
  for (auto& m : model.memories()) {
    m = PatternMemory::read(is);
    if (m.dim() != c.hidden_dim) throw ValidationError("checkpoint: memory dim mismatch");
  }
  if (!is) throw ValidationError("checkpoint: truncated file");
  return model;
}

inline void save_checkpoint(const std::string& path, const HMNet& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot open '" + path + "' for writing");
  save_checkpoint(os, model);
}

inline HMNet load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open checkpoint '" + path + "'");
  return load_checkpoint(is);
}

}  // namespace hmnet
