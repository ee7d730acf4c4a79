#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "hmnet/error.hpp"
#include "hmnet/ops.hpp"

namespace hmnet {

/// Per-level hyperparameters of one MC-Block stage.
struct LevelConfig {
  std::size_t block_size = 1;
  bool enable_interact = true;
  bool enable_denoise = true;
  std::size_t memory_capacity = 4096;
  std::size_t top_k = 16;
};

struct HMNetConfig {
  std::size_t input_length = 96;
  std::size_t horizon = 96;
  std::size_t num_variables = 1;
  std::size_t hidden_dim = 32;
  std::vector<LevelConfig> levels = {LevelConfig{6}, LevelConfig{4}, LevelConfig{4}};
  std::size_t time_feature_dim = 5;
  Activation activation = Activation::gelu;
  std::uint64_t seed = 2023;

  /// Input length seen by each level followed by the final output length;
  /// size levels.size() + 1. Assumes a validated config.
  std::vector<std::size_t> level_lengths() const {
    std::vector<std::size_t> out{input_length};
    for (const auto& l : levels) out.push_back(out.back() / l.block_size);
    return out;
  }

  /// Output positions of level i.
  std::size_t positions(std::size_t level) const { return level_lengths()[level + 1]; }

  void validate() const {
    if (levels.empty()) throw ValidationError("config: at least one level is required");
    if (hidden_dim == 0) throw ValidationError("config: hidden_dim must be >= 1");
    if (num_variables == 0) throw ValidationError("config: num_variables must be >= 1");
    if (horizon == 0) throw ValidationError("config: horizon must be >= 1");
    if (input_length == 0) throw ValidationError("config: input_length must be >= 1");
    std::size_t length = input_length;
    std::ostringstream trail;
    trail << input_length;
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const auto& l = levels[i];
      if (l.block_size == 0) throw ValidationError("config: level " + std::to_string(i) + " block_size must be >= 1");
      if (length % l.block_size != 0) {
        std::ostringstream msg;
        msg << "config: block sizes do not divide input_length: level " << i << " receives "
            << trail.str() << " = " << length << " steps, and " << length << " % " << l.block_size
            << " = " << (length % l.block_size);
        throw ValidationError(msg.str());
      }
      if (l.enable_denoise && (l.memory_capacity == 0 || l.top_k == 0)) {
        throw ValidationError("config: level " + std::to_string(i) +
                              " enables denoising but memory_capacity or top_k is 0");
      }
      length /= l.block_size;
      trail << " / " << l.block_size;
    }
  }
};

inline HMNetConfig default_config(std::size_t num_variables, std::size_t horizon) {
  HMNetConfig cfg;
  cfg.num_variables = num_variables;
  cfg.horizon = horizon;
  return cfg;
}

}  // namespace hmnet
