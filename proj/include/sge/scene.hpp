#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sge {

// Geometric predicates, evaluated per ordered entity pair in priority order;
// the first match wins, so each pair yields at most one relation.
enum Predicate : int {
  kPredInside = 0,
  kPredLeftOf,
  kPredRightOf,
  kPredAbove,
  kPredBelow,
  kPredLargerThan,
  kPredicateCount = 6,
};

const char* predicate_name(int p);

struct SceneConfig {
  std::int64_t canvas_h = 48;
  std::int64_t canvas_w = 48;
  int n_entities_min = 2;
  int n_entities_max = 4;
  int category_count = 6;
  int predicate_count = kPredicateCount;  // first k predicates are active
  double nest_prob = 0.35;                // chance of emitting a frame+inner pair
  // min_pair_sep > 1 switches on well-separated placement: every entity pair
  // sits at least min_pair_sep pixels away from every predicate decision
  // boundary (axis gaps/overlaps and the 2x area threshold), so labels stay
  // decodable from slightly noisy geometry estimates. max_pair_gap > 0
  // additionally caps the decisive gap between top-level boxes, keeping the
  // relation evidence below one feature-grid patch.
  std::int64_t min_pair_sep = 1;
  std::int64_t max_pair_gap = 0;  // 0 = uncapped
  void validate() const;
};

struct Entity {
  int category_id = 0;
  // half-open pixel box [x0,x1) x [y0,y1); equals the mask's tight bounding box
  std::int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::int64_t box_w() const { return x1 - x0; }
  std::int64_t box_h() const { return y1 - y0; }
  std::int64_t box_area() const { return box_w() * box_h(); }
};

struct Relation {
  int subject = 0;
  int predicate = 0;
  int object = 0;
  bool operator==(const Relation&) const = default;
};

struct SyntheticScene {
  std::uint64_t seed = 0;
  SceneConfig config;
  std::vector<Entity> entities;
  std::vector<std::vector<std::uint8_t>> masks;  // one canvas_h*canvas_w grid per entity
  std::vector<Relation> relations;
  int n() const { return static_cast<int>(entities.size()); }
};

// Deterministic in (seed, config). Masks are pairwise disjoint and nonempty;
// nested pairs use a hollow rectangular frame whose hole hosts the inner
// entity, so boxes nest while masks stay disjoint.
SyntheticScene generate_scene(std::uint64_t seed, const SceneConfig& config);

// Independent ground-truth path: recovers each box from its mask and
// re-evaluates the predicate rules; generate_scene's relations must match.
std::vector<Relation> oracle_relations(const SyntheticScene& scene);

std::vector<int> category_counts(const SyntheticScene& scene);

}  // namespace sge
