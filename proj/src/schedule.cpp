#include "sge/schedule.hpp"

#include "sge/io_util.hpp"

#include <cmath>
#include <stdexcept>

namespace sge {

namespace {

bool matches(const std::string& name, const std::string& pattern) {
  if (!pattern.empty() && pattern.back() == '*')
    return name.rfind(pattern.substr(0, pattern.size() - 1), 0) == 0;
  return name == pattern;
}

bool matches_any(const std::string& name, const std::vector<std::string>& patterns) {
  for (const auto& p : patterns)
    if (matches(name, p)) return true;
  return false;
}

std::vector<std::string> stage_patterns(int stage_id) {
  switch (stage_id) {
    case 1:
      return {"proj.wv.*"};
    case 2:
      return {"sge.*", "proj.wg.*", "llm.sentinel_*"};
    case 3:
      return {"*"};
    default:
      throw std::invalid_argument("configure_stage: stage must be 1..3");
  }
}

}  // namespace

StagePlan configure_stage(int stage_id, const StageOverrides& overrides) {
  StagePlan plan;
  plan.stage_id = stage_id;
  plan.trainable_patterns = stage_patterns(stage_id);
  plan.learning_rate = stage_id == 1 ? 2e-3 : 2e-5;
  plan.steps = stage_id == 1 ? 100 : (stage_id == 2 ? 300 : 200);
  plan.batch_size = 8;
  plan.seed = 0;
  if (overrides.trainable_patterns && *overrides.trainable_patterns != plan.trainable_patterns)
    throw std::invalid_argument("configure_stage: the stage " + std::to_string(stage_id) +
                                " trainable set is fixed by the schedule contract");
  if (overrides.learning_rate) {
    if (*overrides.learning_rate <= 0.0)
      throw std::invalid_argument("configure_stage: learning rate must be positive");
    plan.learning_rate = *overrides.learning_rate;
  }
  if (overrides.steps) {
    if (*overrides.steps < 0)
      throw std::invalid_argument("configure_stage: steps must be >= 0");
    plan.steps = *overrides.steps;
  }
  if (overrides.batch_size) {
    if (*overrides.batch_size < 1)
      throw std::invalid_argument("configure_stage: batch size must be >= 1");
    plan.batch_size = *overrides.batch_size;
  }
  if (overrides.seed) plan.seed = *overrides.seed;
  return plan;
}

void AdamW::step(ParamStore& params) {
  for (Parameter* p : params.all()) {
    if (!p->tensor.requires_grad()) continue;
    if (!p->tensor.has_grad())
      throw std::runtime_error("AdamW: missing gradient for trainable parameter " + p->name);
    const Eigen::ArrayXd& g = p->tensor.grad();
    State& st = state_[p->name];
    if (st.t == 0) {
      st.m = Eigen::ArrayXd::Zero(g.size());
      st.v = Eigen::ArrayXd::Zero(g.size());
    }
    ++st.t;
    st.m = cfg_.beta1 * st.m + (1.0 - cfg_.beta1) * g;
    st.v = cfg_.beta2 * st.v + (1.0 - cfg_.beta2) * g.square();
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
    Eigen::ArrayXd& vals = p->tensor.values_mut();
    vals -= cfg_.lr * ((st.m / bc1) / ((st.v / bc2).sqrt() + cfg_.eps) +
                       cfg_.weight_decay * vals);
  }
}

std::vector<SampleRef> select_samples(const std::vector<SceneRecord>& data, int stage_id,
                                      const AblationFlags& flags) {
  if (stage_id < 1 || stage_id > 3)
    throw std::invalid_argument("select_samples: stage must be 1..3");
  std::vector<SampleRef> out;
  for (const SceneRecord& rec : data) {
    for (const QASample& qa : rec.qa) {
      bool keep = false;
      switch (stage_id) {
        case 1:
          keep = qa.task == Task::caption;
          break;
        case 2:
          keep = qa.task == Task::relation;
          break;
        case 3:
          keep = qa.task == Task::caption || qa.task == Task::counting ||
                 (flags.sge_d && qa.task == Task::relation);
          break;
      }
      if (keep) out.push_back(SampleRef{&rec.scene, &qa});
    }
  }
  return out;
}

double mean_loss(Model& model, const std::vector<SampleRef>& samples) {
  if (samples.empty()) throw std::invalid_argument("mean_loss: no samples");
  double sum = 0.0;
  for (const SampleRef& s : samples) sum += model.forward(*s.scene, *s.qa).loss.value();
  return sum / static_cast<double>(samples.size());
}

TrainTrace train_stage(Model& model, const StagePlan& plan,
                       const std::vector<SampleRef>& samples, AdamW& opt) {
  if (plan.batch_size < 1) throw std::invalid_argument("train_stage: batch size must be >= 1");
  model.apply_stage(plan.stage_id);
  ParamStore& store = model.params();
  // the per-parameter stage tags and the plan's pattern surface must agree
  for (const Parameter* p : static_cast<const ParamStore&>(store).all()) {
    if (p->tensor.requires_grad() != matches_any(p->name, plan.trainable_patterns))
      throw std::logic_error("train_stage: trainable-set mismatch for " + p->name);
  }

  TrainTrace trace;
  if (plan.steps == 0) {
    trace.final_params_checksum = params_checksum(store);
    return trace;
  }
  if (samples.empty()) throw std::invalid_argument("train_stage: no samples for this stage");

  opt.set_lr(plan.learning_rate);
  Rng rng(mix_seed(plan.seed, fnv1a64("train-stage-" + std::to_string(plan.stage_id))));
  const double inv_batch = 1.0 / static_cast<double>(plan.batch_size);
  for (int s = 0; s < plan.steps; ++s) {
    store.zero_grads();
    double loss_sum = 0.0;
    for (int b = 0; b < plan.batch_size; ++b) {
      const SampleRef& ref =
          samples[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(samples.size()) - 1))];
      Tensor loss = model.forward(*ref.scene, *ref.qa).loss;
      const double lv = loss.value();
      if (!std::isfinite(lv))
        throw std::runtime_error("train_stage: non-finite loss at stage " +
                                 std::to_string(plan.stage_id) + " step " + std::to_string(s) +
                                 " (scene seed " + std::to_string(ref.scene->seed) + ")");
      loss_sum += lv;
      backward(loss, inv_batch);
    }
    double grad_sq = 0.0;
    for (const Parameter* p : static_cast<const ParamStore&>(store).all())
      if (p->tensor.requires_grad() && p->tensor.has_grad())
        grad_sq += p->tensor.grad().square().sum();
    opt.step(store);
    trace.steps.push_back(
        TrainStepRecord{s, loss_sum * inv_batch, std::sqrt(grad_sq), plan.learning_rate});
  }
  trace.final_params_checksum = params_checksum(store);
  return trace;
}

PipelineResult run_pipeline(Model& model, const std::vector<SceneRecord>& data,
                            const PipelineConfig& cfg,
                            const std::function<void(int, const TrainTrace&)>& on_stage_done) {
  const AblationFlags& flags = model.config().flags;
  PipelineResult result;
  auto run_one = [&](const StagePlan& plan) {
    AdamW opt(AdamWConfig{});  // fresh moments per stage
    TrainTrace trace =
        train_stage(model, plan, select_samples(data, plan.stage_id, flags), opt);
    result.stages_run.push_back(plan.stage_id);
    result.traces.push_back(std::move(trace));
    if (on_stage_done) on_stage_done(plan.stage_id, result.traces.back());
  };
  run_one(cfg.stage1);
  // A separate SGE stage needs the graph pathway, relation data, and the
  // sge_t recipe; otherwise relation data (if any) rides along in stage 3.
  if (flags.sg && flags.sge_d && flags.sge_t) run_one(cfg.stage2);
  run_one(cfg.stage3);
  return result;
}

}  // namespace sge
