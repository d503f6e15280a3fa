#pragma once

#include "sge/scene.hpp"
#include "sge/tensor.hpp"

#include <array>
#include <cstdint>

namespace sge {

// Channel layout of the synthetic frozen encoder's feature map:
//   [0, 8)   category pattern of the cell's owning entity (background pattern
//            on unowned cells)
//   [8, 10)  cell-center coordinates, normalized to [0, 1] per axis; a linear
//            ramp, so bilinear mask pooling recovers sub-cell entity positions
//            that the quantized per-cell values cannot express
//   [10, 12) owning entity's box width/height normalized by the canvas; zero
//            on background cells
//   [12, d_e) zero
inline constexpr int kCategoryPatternDims = 8;
inline constexpr int kEncoderMinDims = 12;

struct EncoderConfig {
  std::int64_t d_e = 16;
  std::int64_t h_v = 6;
  std::int64_t w_v = 6;
  double noise_sigma = 0.02;
};

// Deterministic +-1 pattern per category; category -1 is the reserved
// background pattern. Patterns are pairwise distinct across -1..7.
std::array<double, kCategoryPatternDims> category_pattern(int category_id);

// Deterministic in (scene, config); cell ownership goes to the entity with
// the most mask pixels in the cell's pixel block (ties to the lower index).
Tensor render_feature_map(const SyntheticScene& scene, const EncoderConfig& config);

}  // namespace sge
