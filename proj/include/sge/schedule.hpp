#pragma once

#include "sge/dataset.hpp"
#include "sge/model.hpp"
#include "sge/tensor.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sge {

struct StagePlan {
  int stage_id = 1;
  std::vector<std::string> trainable_patterns;  // must agree with the stage contract
  double learning_rate = 0.0;
  int steps = 0;
  int batch_size = 8;
  std::uint64_t seed = 0;
};

struct StageOverrides {
  std::optional<double> learning_rate;
  std::optional<int> steps;
  std::optional<int> batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<std::string>> trainable_patterns;
};

// Stage defaults: lr 2e-3 for stage 1, 2e-5 for stages 2 and 3; trainable
// sets are fixed per stage and an override that disagrees is rejected.
StagePlan configure_stage(int stage_id, const StageOverrides& overrides = {});

// Decoupled-weight-decay adaptive-moment optimizer. State is created lazily
// per trainable parameter on its first update and never for frozen ones.
struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class AdamW {
 public:
  struct State {
    Eigen::ArrayXd m, v;
    std::int64_t t = 0;
  };

  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  // One update over every requires_grad parameter; a trainable parameter
  // without a gradient is an error.
  void step(ParamStore& params);

  std::map<std::string, State>& state() { return state_; }
  const std::map<std::string, State>& state() const { return state_; }

 private:
  AdamWConfig cfg_;
  std::map<std::string, State> state_;
};

struct TrainStepRecord {
  int step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

struct TrainTrace {
  std::vector<TrainStepRecord> steps;
  std::uint64_t final_params_checksum = 0;
};

struct SampleRef {
  const SyntheticScene* scene = nullptr;
  const QASample* qa = nullptr;
};

// Stage data regimes: stage 1 captions, stage 2 relation QA, stage 3 mixed
// instructions (captions + counting, plus relations when sge_d is on).
std::vector<SampleRef> select_samples(const std::vector<SceneRecord>& data, int stage_id,
                                      const AblationFlags& flags);

double mean_loss(Model& model, const std::vector<SampleRef>& samples);

// Mini-batch training with per-sample gradient accumulation in fixed order.
// Parameters outside the stage's trainable set stay bit-identical. A
// non-finite batch loss aborts with step/sample diagnostics.
TrainTrace train_stage(Model& model, const StagePlan& plan,
                       const std::vector<SampleRef>& samples, AdamW& opt);

struct PipelineConfig {
  StagePlan stage1 = configure_stage(1);
  StagePlan stage2 = configure_stage(2);
  StagePlan stage3 = configure_stage(3);
};

struct PipelineResult {
  std::vector<int> stages_run;
  std::vector<TrainTrace> traces;
};

// Runs stages 1 -> 2 -> 3 on the model in place with a fresh optimizer per
// stage. Stage 2 runs only when the flags call for a separate SGE stage
// (sg && sge_d && sge_t); otherwise its relation data already appears in the
// stage-3 mix. on_stage_done fires after each completed stage.
PipelineResult run_pipeline(
    Model& model, const std::vector<SceneRecord>& data, const PipelineConfig& cfg,
    const std::function<void(int, const TrainTrace&)>& on_stage_done = {});

}  // namespace sge
