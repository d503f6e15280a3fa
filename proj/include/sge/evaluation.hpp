#pragma once

#include "sge/model.hpp"
#include "sge/schedule.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sge {

// Answer provenance for harness-soundness checks: `oracle` replays the
// stored ground-truth answer, `constant_wrong` always answers a token that
// can never be a label.
enum class AnswerSource { model, oracle, constant_wrong };

struct EvalResult {
  double accuracy = 0.0;
  std::int64_t total = 0;
  std::int64_t correct = 0;
};

EvalResult evaluate_relations(Model& model, const std::vector<SampleRef>& samples,
                              AnswerSource source = AnswerSource::model);

EvalResult evaluate_counting(Model& model, const std::vector<SampleRef>& samples,
                             AnswerSource source = AnswerSource::model);

// Per-token exact-match fraction over caption answers.
EvalResult evaluate_captions(Model& model, const std::vector<SampleRef>& samples,
                             AnswerSource source = AnswerSource::model);

// Harvests scenes (advancing the seed past infeasible configs) until every
// one of the 7 relation answers (6 predicates + "none") holds exactly
// n_per_class samples, so the label distribution's chance level is 1/7.
// Each record carries one QA sample.
std::vector<SceneRecord> build_balanced_relation_set(const SceneConfig& scene_cfg,
                                                     const Vocab& vocab, int n_per_class,
                                                     std::uint64_t seed0);

std::vector<SampleRef> flatten_samples(const std::vector<SceneRecord>& records);

struct AblationRow {
  std::string label;
  AblationFlags flags;
};

// Table-style grids: component ablation (baseline, +graph, +message passing,
// +prompt, full) and training-recipe ablation (separate SGE stage, joint,
// no graph with relation data appended).
std::vector<AblationRow> component_grid_rows();
std::vector<AblationRow> recipe_grid_rows();

struct AblationGridConfig {
  ModelConfig model;  // flags/init_seed are overridden per cell
  PipelineConfig pipeline;
  int train_scenes = 64;
  int test_per_class = 12;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::uint64_t data_seed = 9000;
};

struct AblationCellResult {
  std::string row;
  AblationFlags flags;
  std::vector<std::uint64_t> seeds;
  std::vector<double> relation_accuracy;  // aligned with seeds
  double median = 0.0;
  std::int64_t scalar_count = 0;
  std::int64_t sge_scalar_count = 0;
  std::vector<int> stages_run;
};

// Trains one model per (row, seed) on shared data and evaluates relation
// accuracy on a shared balanced test set with disjoint scene seeds.
std::vector<AblationCellResult> run_ablation_grid(const std::vector<AblationRow>& rows,
                                                  const AblationGridConfig& cfg);

double median_of(std::vector<double> values);

std::string format_report_text(const std::vector<AblationCellResult>& cells);
std::string format_report_jsonl(const std::vector<AblationCellResult>& cells);

}  // namespace sge
