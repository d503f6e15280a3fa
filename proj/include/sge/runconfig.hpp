#pragma once

#include "sge/model.hpp"
#include "sge/schedule.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sge {

using ordered_json = nlohmann::ordered_json;

struct DataConfig {
  int train_scenes = 64;
  int val_scenes = 16;
  int test_scenes = 16;
  int test_per_class = 12;  // balanced relation test set
  std::uint64_t seed = 9000;
};

struct GridConfig {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
};

struct GradcheckConfig {
  double tolerance = 1e-5;
  std::int64_t sample_per_param = 0;  // 0 = every scalar
  std::uint64_t seed = 17;
  std::uint64_t scene_seed = 42;
};

struct PathConfig {
  std::string out_dir;  // empty = $SGE_OUT_ROOT, else "out"
  std::string dataset;
  std::string checkpoint;
};

// One structure drives every command; each run embeds its resolved form in
// the artifacts it writes. Precedence: command line > config file > defaults.
struct RunConfig {
  ModelConfig model;
  StageOverrides stage1, stage2, stage3;
  DataConfig data;
  GridConfig grid;
  GradcheckConfig gradcheck;
  PathConfig paths;

  std::string resolved_out_dir() const;
  StageOverrides stage_overrides(int stage_id) const;
};

// JSON forms. Parsers reject unknown keys so config typos surface instead of
// silently falling back to defaults; every field is optional.
ordered_json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const ordered_json& j);
RunConfig load_run_config(const std::string& path);

// Structural identity of a model: everything that determines parameter
// names and shapes (init_seed deliberately excluded).
ordered_json topology_json(const ModelConfig& cfg);

ordered_json model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const ordered_json& j);

}  // namespace sge
