#pragma once

#include <array>
#include <cstdint>

#include "affordsplat/core/errors.hpp"
#include "affordsplat/textmod/model.hpp"

namespace affordsplat::affordnet {

struct ModelConfig {
  std::int64_t d = 128;  // feature width (512 in the full-scale setup)
  std::int64_t d_text = 64;
  std::array<std::int64_t, 3> granularity_sizes{128, 64, 32};
  int heads = 8;
  int encoder_refine_layers = 2;
  int decoder_layers = 2;
  std::int64_t idw_k = 3;
  double idw_power = 2.0;
  std::int64_t group_k = 16;
  std::int64_t ffn_mult = 2;

  // Cross-modal structure alignment.
  std::int64_t d_consis = 256;
  double tau = 0.1;
  std::int64_t cmsa_width = 0;  // 0 -> d / 4
  std::int64_t cmsa_tokens = 256;
  int cmsa_heads = 4;

  textmod::TextConfig text;

  std::int64_t cmsa_width_or_default() const {
    return cmsa_width > 0 ? cmsa_width : std::max<std::int64_t>(8, d / 4);
  }

  void validate() const {
    if (!(granularity_sizes[0] > granularity_sizes[1] &&
          granularity_sizes[1] > granularity_sizes[2]))
      throw ConfigError("granularity_sizes must be strictly decreasing");
    if (granularity_sizes[2] < 1) throw ConfigError("granularity sizes >= 1");
    if (d % heads != 0) throw ConfigError("d must be divisible by heads");
    if (text.d_text != d_text)
      throw ConfigError("text.d_text must match d_text");
    if (d_text % text.heads != 0)
      throw ConfigError("d_text must be divisible by text heads");
    if (idw_k < 1) throw ConfigError("idw_k must be >= 1");
    if (group_k < 1) throw ConfigError("group_k must be >= 1");
    if (tau <= 0) throw ConfigError("tau must be positive");
  }
};

}  // namespace affordsplat::affordnet
