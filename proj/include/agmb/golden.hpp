#pragma once

// Regression checksums of the demo forward pass: default ModelConfig,
// seed 42, all-ones input. The values depend on libstdc++'s
// normal_distribution and on strict IEEE double arithmetic (no FMA
// contraction). Regenerate with `agmb demo [--ablate ...]` only when the
// model is changed on purpose.

#include <agmb/model.hpp>

#include <cstdint>

namespace agmb::golden {

inline constexpr std::uint64_t kDemoSeed = 42;

inline std::uint64_t demo_checksum(ModelVariant v) {
  switch (v) {
    case ModelVariant::Full: return 0x7d25a8e37f0f0ccdull;
    case ModelVariant::LocalOnly: return 0xb1afa569ba1ba6a0ull;
    case ModelVariant::GlobalOnly: return 0xf8a23a1136a92ea9ull;
    case ModelVariant::NoFusion: return 0xa48bb512342cd5eeull;
  }
  return 0;
}

}  // namespace agmb::golden
