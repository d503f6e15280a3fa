#include "sge/encoder.hpp"

#include "sge/io_util.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace sge {

namespace {

constexpr int kPatternTableLow = -1;  // background
constexpr int kPatternTableHigh = 7;  // maximum category id

std::array<double, kCategoryPatternDims> pattern_from_hash(std::uint64_t h) {
  std::array<double, kCategoryPatternDims> p{};
  for (int b = 0; b < kCategoryPatternDims; ++b) p[b] = (h >> b) & 1 ? 1.0 : -1.0;
  return p;
}

// Built once, in id order, skipping hash candidates that collide with an
// earlier entry so all patterns are pairwise distinct.
const std::array<double, kCategoryPatternDims>& pattern_table(int id) {
  static const auto table = [] {
    std::vector<std::array<double, kCategoryPatternDims>> t;
    for (int id2 = kPatternTableLow; id2 <= kPatternTableHigh; ++id2) {
      for (std::uint64_t salt = 0;; ++salt) {
        const std::string key =
            "entity-category/" + std::to_string(id2) + "/" + std::to_string(salt);
        auto candidate = pattern_from_hash(fnv1a64(key));
        bool clash = false;
        for (const auto& prev : t) {
          if (prev == candidate) {
            clash = true;
            break;
          }
        }
        if (!clash) {
          t.push_back(candidate);
          break;
        }
      }
    }
    return t;
  }();
  if (id < kPatternTableLow || id > kPatternTableHigh) {
    throw std::invalid_argument("category id out of range: " + std::to_string(id));
  }
  return table[static_cast<std::size_t>(id - kPatternTableLow)];
}

}  // namespace

std::array<double, kCategoryPatternDims> category_pattern(int category_id) {
  return pattern_table(category_id);
}

Tensor render_feature_map(const SyntheticScene& scene, const EncoderConfig& config) {
  const std::int64_t h_m = scene.config.canvas_h, w_m = scene.config.canvas_w;
  if (config.d_e < kEncoderMinDims) {
    throw std::invalid_argument("encoder config: d_e must be at least " +
                                std::to_string(kEncoderMinDims) + ", got " +
                                std::to_string(config.d_e));
  }
  if (config.h_v < 1 || config.w_v < 1 || config.h_v > h_m || config.w_v > w_m) {
    throw std::invalid_argument("encoder config: feature grid must be within the canvas");
  }

  const std::int64_t h_v = config.h_v, w_v = config.w_v;
  const std::int64_t cells = h_v * w_v;
  const int n = scene.n();

  // per-cell mask pixel counts per entity
  std::vector<std::int64_t> counts(static_cast<std::size_t>(cells * std::max(n, 1)), 0);
  for (int e = 0; e < n; ++e) {
    const auto& mask = scene.masks[static_cast<std::size_t>(e)];
    for (std::int64_t py = 0; py < h_m; ++py) {
      const std::int64_t cy = py * h_v / h_m;
      for (std::int64_t px = 0; px < w_m; ++px) {
        if (!mask[static_cast<std::size_t>(py * w_m + px)]) continue;
        const std::int64_t cx = px * w_v / w_m;
        counts[static_cast<std::size_t>((cy * w_v + cx) * n + e)] += 1;
      }
    }
  }

  Tensor fmap = Tensor::zeros({config.d_e, h_v, w_v});
  auto& vals = fmap.values_mut();
  auto at = [&](std::int64_t c, std::int64_t cy, std::int64_t cx) -> double& {
    return vals[(c * h_v + cy) * w_v + cx];
  };

  for (std::int64_t cy = 0; cy < h_v; ++cy) {
    for (std::int64_t cx = 0; cx < w_v; ++cx) {
      int owner = -1;
      std::int64_t best = 0;
      for (int e = 0; e < n; ++e) {
        const std::int64_t c = counts[static_cast<std::size_t>((cy * w_v + cx) * n + e)];
        if (c > best) {
          best = c;
          owner = e;
        }
      }
      const auto pattern =
          category_pattern(owner < 0 ? -1 : scene.entities[static_cast<std::size_t>(owner)]
                                                .category_id);
      for (int c = 0; c < kCategoryPatternDims; ++c) at(c, cy, cx) = pattern[c];
      at(8, cy, cx) = (static_cast<double>(cx) + 0.5) / static_cast<double>(w_v);
      at(9, cy, cx) = (static_cast<double>(cy) + 0.5) / static_cast<double>(h_v);
      if (owner >= 0) {
        const Entity& e = scene.entities[static_cast<std::size_t>(owner)];
        at(10, cy, cx) = static_cast<double>(e.box_w()) / static_cast<double>(w_m);
        at(11, cy, cx) = static_cast<double>(e.box_h()) / static_cast<double>(h_m);
      }
    }
  }

  if (config.noise_sigma > 0.0) {
    Rng rng(mix_seed(scene.seed, fnv1a64("encoder-noise")));
    for (std::int64_t i = 0; i < fmap.size(); ++i) {
      vals[i] += config.noise_sigma * rng.normal();
    }
  }
  return fmap;
}

}  // namespace sge
