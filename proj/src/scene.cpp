#include "sge/scene.hpp"

#include "sge/io_util.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sge {

namespace {

constexpr std::int64_t kMinSide = 5;        // plain entities
constexpr std::int64_t kFrameThickness = 3; // nested-pair outer frame walls
constexpr std::int64_t kFrameMinSide = 14;
constexpr std::int64_t kFrameMaxSide = 18;
constexpr int kPlacementAttempts = 200;

struct Box {
  std::int64_t x0, y0, x1, y1;
};

bool disjoint_with_gap(const Box& a, const Box& b) {
  // require at least one empty pixel between distinct top-level boxes
  return a.x1 + 1 <= b.x0 || b.x1 + 1 <= a.x0 || a.y1 + 1 <= b.y0 || b.y1 + 1 <= a.y0;
}

// area-ratio exclusion band around the 2x larger-than threshold, active only
// in well-separated placement mode
constexpr double kRatioBandLow = 1.5;
constexpr double kRatioBandHigh = 2.8;

// positive: empty pixels between the edges; negative: minus the overlap extent
std::int64_t axis_sep(std::int64_t a0, std::int64_t a1, std::int64_t b0, std::int64_t b1) {
  return std::max(b0 - a1, a0 - b1);
}

// Every per-axis separation stays at least sep away from zero (the
// disjoint/overlap boundary every directional rule tests), and pairs decided
// by the area rule (disjoint on both axes) stay outside the ratio band.
// cap > 0 additionally bounds the decisive gap.
bool well_separated(const Box& a, const Box& b, std::int64_t sep, std::int64_t cap) {
  const std::int64_t sx = axis_sep(a.x0, a.x1, b.x0, b.x1);
  const std::int64_t sy = axis_sep(a.y0, a.y1, b.y0, b.y1);
  if (std::abs(sx) < sep || std::abs(sy) < sep) return false;
  const bool diagonal = sx >= sep && sy >= sep;
  if (diagonal) {
    // the area rule decides these pairs; keep a clear band around its 2x
    // threshold (the gap cap does not apply: distance is not the evidence)
    const auto area = [](const Box& v) {
      return static_cast<double>((v.x1 - v.x0) * (v.y1 - v.y0));
    };
    const double r = std::max(area(a), area(b)) / std::min(area(a), area(b));
    if (r > kRatioBandLow && r < kRatioBandHigh) return false;
  } else if (cap > 0 && std::max(sx, sy) > cap) {
    return false;
  }
  return true;
}

bool x_overlap(const Entity& a, const Entity& b) {
  return std::max(a.x0, b.x0) < std::min(a.x1, b.x1);
}

bool y_overlap(const Entity& a, const Entity& b) {
  return std::max(a.y0, b.y0) < std::min(a.y1, b.y1);
}

// First matching predicate in priority order, or -1. Only predicates with
// id < active participate.
int pair_predicate(const Entity& a, const Entity& b, int active) {
  for (int p = 0; p < active; ++p) {
    switch (p) {
      case kPredInside:
        if (a.x0 > b.x0 && a.x1 < b.x1 && a.y0 > b.y0 && a.y1 < b.y1) return p;
        break;
      case kPredLeftOf:
        if (a.x1 <= b.x0 && y_overlap(a, b)) return p;
        break;
      case kPredRightOf:
        if (a.x0 >= b.x1 && y_overlap(a, b)) return p;
        break;
      case kPredAbove:
        if (a.y1 <= b.y0 && x_overlap(a, b)) return p;
        break;
      case kPredBelow:
        if (a.y0 >= b.y1 && x_overlap(a, b)) return p;
        break;
      case kPredLargerThan:
        if (a.box_area() >= 2 * b.box_area()) return p;
        break;
      default:
        break;
    }
  }
  return -1;
}

enum class Shape { rect, ellipse, frame, inner_rect };

std::vector<std::uint8_t> raster(Shape shape, const Box& b, std::int64_t h_m,
                                 std::int64_t w_m) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h_m * w_m), 0);
  const double cx = 0.5 * static_cast<double>(b.x0 + b.x1);
  const double cy = 0.5 * static_cast<double>(b.y0 + b.y1);
  const double ax = 0.5 * static_cast<double>(b.x1 - b.x0);
  const double ay = 0.5 * static_cast<double>(b.y1 - b.y0);
  for (std::int64_t py = b.y0; py < b.y1; ++py) {
    for (std::int64_t px = b.x0; px < b.x1; ++px) {
      bool set = false;
      switch (shape) {
        case Shape::rect:
        case Shape::inner_rect:
          set = true;
          break;
        case Shape::ellipse: {
          const double nx = (static_cast<double>(px) + 0.5 - cx) / ax;
          const double ny = (static_cast<double>(py) + 0.5 - cy) / ay;
          set = nx * nx + ny * ny <= 1.0;
          break;
        }
        case Shape::frame:
          set = px < b.x0 + kFrameThickness || px >= b.x1 - kFrameThickness ||
                py < b.y0 + kFrameThickness || py >= b.y1 - kFrameThickness;
          break;
      }
      if (set) mask[static_cast<std::size_t>(py * w_m + px)] = 1;
    }
  }
  return mask;
}

}  // namespace

const char* predicate_name(int p) {
  switch (p) {
    case kPredInside: return "inside";
    case kPredLeftOf: return "left-of";
    case kPredRightOf: return "right-of";
    case kPredAbove: return "above";
    case kPredBelow: return "below";
    case kPredLargerThan: return "larger-than";
    default: throw std::invalid_argument("unknown predicate id " + std::to_string(p));
  }
}

void SceneConfig::validate() const {
  if (canvas_h < 8 || canvas_w < 8) {
    throw std::invalid_argument("scene config: canvas must be at least 8x8");
  }
  if (n_entities_min < 1 || n_entities_min > n_entities_max || n_entities_max > 9) {
    throw std::invalid_argument("scene config: entity range must satisfy 1 <= min <= max <= 9");
  }
  if (category_count < 1 || category_count > 8) {
    throw std::invalid_argument("scene config: category_count must be in [1, 8]");
  }
  if (predicate_count < 1 || predicate_count > kPredicateCount) {
    throw std::invalid_argument("scene config: predicate_count must be in [1, 6]");
  }
  if (nest_prob < 0.0 || nest_prob > 1.0) {
    throw std::invalid_argument("scene config: nest_prob must be in [0, 1]");
  }
  if (min_pair_sep < 1 || min_pair_sep > 6) {
    // the upper bound keeps the nested pair constructible: the inner box must
    // reach min_pair_sep a side, and the smallest frame's hole allows 6
    throw std::invalid_argument("scene config: min_pair_sep must be in [1, 6]");
  }
  if (max_pair_gap != 0 && max_pair_gap < min_pair_sep) {
    throw std::invalid_argument("scene config: max_pair_gap must be 0 or >= min_pair_sep");
  }
  const std::int64_t cells = (canvas_h / (kMinSide + 1)) * (canvas_w / (kMinSide + 1));
  if (cells < n_entities_max) {
    throw std::invalid_argument("scene config: canvas too small for requested entity count");
  }
}

SyntheticScene generate_scene(std::uint64_t seed, const SceneConfig& config) {
  config.validate();
  SyntheticScene scene;
  scene.seed = seed;
  scene.config = config;
  Rng rng(mix_seed(seed, fnv1a64("scene")));

  const std::int64_t h_m = config.canvas_h, w_m = config.canvas_w;
  const auto n = static_cast<int>(rng.uniform_int(config.n_entities_min, config.n_entities_max));
  // margin-filtered mode; off by default so seeds keep their historical scenes
  const bool margins = config.min_pair_sep > 1 || config.max_pair_gap > 0;
  const std::int64_t edge = margins ? config.min_pair_sep : 0;  // canvas-edge inset
  const bool frames_fit = h_m >= kFrameMaxSide + 2 && w_m >= kFrameMaxSide + 2 &&
                          h_m >= kFrameMinSide + 2 * edge + 2 &&
                          w_m >= kFrameMinSide + 2 * edge + 2;

  std::vector<Box> top_level;  // placement collision set (inner boxes excluded)
  std::vector<Box> all_boxes;  // margin-check set (inner boxes included)
  struct Placed {
    Box box;
    Shape shape;
  };
  std::vector<Placed> placed;

  auto infeasible = [&]() {
    throw std::invalid_argument("scene config infeasible: cannot place entity " +
                                std::to_string(placed.size()) + " on " +
                                std::to_string(h_m) + "x" + std::to_string(w_m) +
                                " canvas (seed " + std::to_string(seed) + ")");
  };

  // candidate acceptance: legacy disjointness against top-level boxes, plus
  // (in margin mode) well-separated geometry against every entity box
  auto top_level_ok = [&](const Box& b) {
    for (const Box& other : top_level) {
      if (!disjoint_with_gap(b, other)) return false;
      if (margins && !well_separated(b, other, config.min_pair_sep, config.max_pair_gap)) {
        return false;
      }
    }
    if (margins) {
      for (const Box& other : all_boxes) {
        // inner boxes are exempt from the gap cap; their frame already bounds them
        if (!well_separated(b, other, config.min_pair_sep, 0)) return false;
      }
    }
    return true;
  };

  // margin mode also keeps boxes away from the canvas edge, where coordinate
  // clamping in downstream samplers saturates and biases geometry estimates
  const std::int64_t inset = edge;

  auto try_place = [&](std::int64_t min_side, std::int64_t max_side) -> Box {
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
      const std::int64_t w = rng.uniform_int(min_side, max_side);
      const std::int64_t h = rng.uniform_int(min_side, max_side);
      const std::int64_t x0 = rng.uniform_int(inset, w_m - w - inset);
      const std::int64_t y0 = rng.uniform_int(inset, h_m - h - inset);
      Box b{x0, y0, x0 + w, y0 + h};
      if (top_level_ok(b)) return b;
    }
    infeasible();
    return {};
  };

  auto commit = [&](const Box& b, Shape shape) {
    placed.push_back({b, shape});
    all_boxes.push_back(b);
  };

  while (static_cast<int>(placed.size()) < n) {
    const int remaining = n - static_cast<int>(placed.size());
    const bool nested = remaining >= 2 && frames_fit && rng.uniform() < config.nest_prob;
    if (nested) {
      const std::int64_t max_side =
          std::min({kFrameMaxSide, h_m - 2 - 2 * inset, w_m - 2 - 2 * inset});
      const std::int64_t inner_min = std::max<std::int64_t>(4, config.min_pair_sep);
      bool done = false;
      for (int attempt = 0; attempt < kPlacementAttempts && !done; ++attempt) {
        const std::int64_t w = rng.uniform_int(kFrameMinSide, max_side);
        const std::int64_t h = rng.uniform_int(kFrameMinSide, max_side);
        const std::int64_t x0 = rng.uniform_int(inset, w_m - w - inset);
        const std::int64_t y0 = rng.uniform_int(inset, h_m - h - inset);
        const Box outer{x0, y0, x0 + w, y0 + h};
        if (!top_level_ok(outer)) continue;
        // hole interior available to the inner entity, with 1px clearance
        const Box hole{outer.x0 + kFrameThickness, outer.y0 + kFrameThickness,
                       outer.x1 - kFrameThickness, outer.y1 - kFrameThickness};
        const int inner_tries = margins ? 50 : 1;
        for (int it = 0; it < inner_tries && !done; ++it) {
          const std::int64_t wi = rng.uniform_int(inner_min, hole.x1 - hole.x0 - 2);
          const std::int64_t hi = rng.uniform_int(inner_min, hole.y1 - hole.y0 - 2);
          const std::int64_t ix0 = rng.uniform_int(hole.x0 + 1, hole.x1 - wi - 1);
          const std::int64_t iy0 = rng.uniform_int(hole.y0 + 1, hole.y1 - hi - 1);
          const Box inner{ix0, iy0, ix0 + wi, iy0 + hi};
          if (margins) {
            bool ok = true;
            for (const Box& other : all_boxes) {
              if (!well_separated(inner, other, config.min_pair_sep, 0)) {
                ok = false;
                break;
              }
            }
            if (!ok) continue;
          }
          top_level.push_back(outer);
          if (rng.uniform() < 0.5) {
            commit(outer, Shape::frame);
            commit(inner, Shape::inner_rect);
          } else {
            commit(inner, Shape::inner_rect);
            commit(outer, Shape::frame);
          }
          done = true;
        }
      }
      if (!done) infeasible();
    } else {
      const std::int64_t max_side =
          std::min({kMinSide + 9, h_m - 2 - 2 * inset, w_m - 2 - 2 * inset});
      Box b = try_place(kMinSide, std::max(kMinSide, max_side));
      top_level.push_back(b);
      commit(b, rng.uniform() < 0.5 ? Shape::rect : Shape::ellipse);
    }
  }

  for (const Placed& p : placed) {
    Entity e;
    e.category_id = static_cast<int>(rng.uniform_int(0, config.category_count - 1));
    e.x0 = p.box.x0;
    e.y0 = p.box.y0;
    e.x1 = p.box.x1;
    e.y1 = p.box.y1;
    scene.entities.push_back(e);
    scene.masks.push_back(raster(p.shape, p.box, h_m, w_m));
  }

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const int p = pair_predicate(scene.entities[i], scene.entities[j],
                                   config.predicate_count);
      if (p >= 0) scene.relations.push_back({i, p, j});
    }
  }
  return scene;
}

std::vector<Relation> oracle_relations(const SyntheticScene& scene) {
  const std::int64_t h_m = scene.config.canvas_h, w_m = scene.config.canvas_w;
  // tight mask bounding boxes, recomputed from pixels
  std::vector<Entity> boxes;
  for (const auto& mask : scene.masks) {
    std::int64_t minx = w_m, miny = h_m, maxx = -1, maxy = -1;
    for (std::int64_t py = 0; py < h_m; ++py) {
      for (std::int64_t px = 0; px < w_m; ++px) {
        if (!mask[static_cast<std::size_t>(py * w_m + px)]) continue;
        minx = std::min(minx, px);
        maxx = std::max(maxx, px);
        miny = std::min(miny, py);
        maxy = std::max(maxy, py);
      }
    }
    Entity e;
    e.x0 = minx;
    e.y0 = miny;
    e.x1 = maxx + 1;
    e.y1 = maxy + 1;
    boxes.push_back(e);
  }

  const int active = scene.config.predicate_count;
  std::vector<Relation> out;
  const int n = scene.n();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const Entity& a = boxes[static_cast<std::size_t>(i)];
      const Entity& b = boxes[static_cast<std::size_t>(j)];
      int found = -1;
      for (int p = 0; p < active && found < 0; ++p) {
        bool hit = false;
        const bool xo = std::max(a.x0, b.x0) < std::min(a.x1, b.x1);
        const bool yo = std::max(a.y0, b.y0) < std::min(a.y1, b.y1);
        if (p == kPredInside) {
          hit = a.x0 > b.x0 && a.x1 < b.x1 && a.y0 > b.y0 && a.y1 < b.y1;
        } else if (p == kPredLeftOf) {
          hit = a.x1 <= b.x0 && yo;
        } else if (p == kPredRightOf) {
          hit = a.x0 >= b.x1 && yo;
        } else if (p == kPredAbove) {
          hit = a.y1 <= b.y0 && xo;
        } else if (p == kPredBelow) {
          hit = a.y0 >= b.y1 && xo;
        } else if (p == kPredLargerThan) {
          hit = a.box_area() >= 2 * b.box_area();
        }
        if (hit) found = p;
      }
      if (found >= 0) out.push_back({i, found, j});
    }
  }
  return out;
}

std::vector<int> category_counts(const SyntheticScene& scene) {
  std::vector<int> counts(static_cast<std::size_t>(scene.config.category_count), 0);
  for (const Entity& e : scene.entities) {
    counts[static_cast<std::size_t>(e.category_id)] += 1;
  }
  return counts;
}

}  // namespace sge
