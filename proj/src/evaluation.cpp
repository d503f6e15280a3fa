#include "sge/evaluation.hpp"

#include "sge/io_util.hpp"

#include "json.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace sge {

namespace {

void require_task(const std::vector<SampleRef>& samples, Task task, const char* what) {
  if (samples.empty()) {
    throw std::invalid_argument(std::string(what) + ": empty sample set");
  }
  for (const SampleRef& s : samples) {
    if (s.scene == nullptr || s.qa == nullptr) {
      throw std::invalid_argument(std::string(what) + ": null sample reference");
    }
    if (s.qa->task != task) {
      throw std::invalid_argument(std::string(what) + ": sample has the wrong task");
    }
  }
}

std::vector<int> predicted_answer(Model& model, const SampleRef& s,
                                  const std::vector<int>& candidates, AnswerSource src) {
  switch (src) {
    case AnswerSource::model:
      return model.predict_answer(*s.scene, *s.qa, candidates);
    case AnswerSource::oracle:
      return s.qa->answer;
    case AnswerSource::constant_wrong:
      // "?" is a prompt-only token, so it can never match a stored answer
      return std::vector<int>(s.qa->answer.size(), Vocab::kQMark);
  }
  throw std::logic_error("unknown answer source");
}

EvalResult exact_match_eval(Model& model, const std::vector<SampleRef>& samples,
                            const std::vector<int>& candidates, AnswerSource src) {
  EvalResult r;
  for (const SampleRef& s : samples) {
    const std::vector<int> pred = predicted_answer(model, s, candidates, src);
    r.correct += (pred == s.qa->answer) ? 1 : 0;
    ++r.total;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

}  // namespace

EvalResult evaluate_relations(Model& model, const std::vector<SampleRef>& samples,
                              AnswerSource source) {
  require_task(samples, Task::relation, "evaluate_relations");
  return exact_match_eval(model, samples, model.vocab().relation_answer_tokens(), source);
}

EvalResult evaluate_counting(Model& model, const std::vector<SampleRef>& samples,
                             AnswerSource source) {
  require_task(samples, Task::counting, "evaluate_counting");
  return exact_match_eval(model, samples,
                          model.vocab().digit_answer_tokens(Vocab::kMaxEntities), source);
}

EvalResult evaluate_captions(Model& model, const std::vector<SampleRef>& samples,
                             AnswerSource source) {
  require_task(samples, Task::caption, "evaluate_captions");
  EvalResult r;
  const std::vector<int> candidates;  // open decode over the whole vocabulary
  for (const SampleRef& s : samples) {
    const std::vector<int> pred = predicted_answer(model, s, candidates, source);
    if (pred.size() != s.qa->answer.size()) {
      throw std::logic_error("evaluate_captions: prediction length mismatch");
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
      r.correct += (pred[i] == s.qa->answer[i]) ? 1 : 0;
      ++r.total;
    }
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

std::vector<SceneRecord> build_balanced_relation_set(const SceneConfig& scene_cfg,
                                                     const Vocab& vocab, int n_per_class,
                                                     std::uint64_t seed0) {
  if (n_per_class < 1) {
    throw std::invalid_argument("build_balanced_relation_set: n_per_class must be >= 1");
  }
  const std::vector<int> classes = vocab.relation_answer_tokens();
  std::map<int, int> bucket;
  for (int c : classes) bucket[c] = 0;

  std::vector<SceneRecord> out;
  out.reserve(classes.size() * static_cast<std::size_t>(n_per_class));
  std::uint64_t s = seed0;
  int scenes_since_progress = 0;
  int remaining = static_cast<int>(classes.size()) * n_per_class;
  while (remaining > 0) {
    if (scenes_since_progress >= 20000) {
      throw std::runtime_error(
          "build_balanced_relation_set: scene distribution cannot fill every answer "
          "class; check predicate_count and nest_prob");
    }
    SyntheticScene scene;
    try {
      scene = generate_scene(s, scene_cfg);
    } catch (const std::invalid_argument&) {
      ++s;
      ++scenes_since_progress;
      continue;
    }
    ++s;
    ++scenes_since_progress;
    for (const QASample& qa : make_relation_qa(scene, vocab)) {
      auto it = bucket.find(qa.answer.at(0));
      if (it == bucket.end()) throw std::logic_error("relation answer outside class set");
      if (it->second >= n_per_class) continue;
      ++it->second;
      --remaining;
      scenes_since_progress = 0;
      out.push_back(SceneRecord{scene, {qa}});
    }
  }
  return out;
}

std::vector<SampleRef> flatten_samples(const std::vector<SceneRecord>& records) {
  std::vector<SampleRef> out;
  for (const SceneRecord& rec : records) {
    for (const QASample& qa : rec.qa) out.push_back(SampleRef{&rec.scene, &qa});
  }
  return out;
}

std::vector<AblationRow> component_grid_rows() {
  auto with = [](bool sg, bool mp, bool prompt) {
    AblationFlags f;
    f.sg = sg;
    f.mp = mp;
    f.prompt = prompt;
    return AblationRow{f.row_name(), f};
  };
  return {with(false, false, false), with(true, false, false), with(true, true, false),
          with(true, false, true), with(true, true, true)};
}

std::vector<AblationRow> recipe_grid_rows() {
  AblationFlags staged;  // dedicated graph-alignment stage
  AblationFlags joint = staged;
  joint.sge_t = false;  // same data, relation QA folded into the final stage
  AblationFlags none = staged;
  none.sg = false;
  none.mp = false;
  none.prompt = false;
  none.sge_t = false;  // no graph pathway; relation QA appended as plain text data
  return {AblationRow{"sge-staged", staged}, AblationRow{"sge-joint", joint},
          AblationRow{"no-sge-data", none}};
}

double median_of(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median_of: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<AblationCellResult> run_ablation_grid(const std::vector<AblationRow>& rows,
                                                  const AblationGridConfig& cfg) {
  if (rows.empty()) throw std::invalid_argument("run_ablation_grid: no rows");
  if (cfg.seeds.empty()) throw std::invalid_argument("run_ablation_grid: no seeds");
  if (cfg.train_scenes < 1 || cfg.test_per_class < 1) {
    throw std::invalid_argument("run_ablation_grid: dataset sizes must be >= 1");
  }
  for (const AblationRow& row : rows) row.flags.validate();

  // Shared data across every (row, seed) cell; test scene seeds start where
  // the training split stopped, so the splits are disjoint by construction.
  const Vocab vocab(cfg.model.scene.category_count);
  std::uint64_t test_seed0 = 0;
  const std::vector<SceneRecord> train =
      build_records(cfg.model.scene, vocab, cfg.train_scenes, cfg.data_seed, &test_seed0);
  const std::vector<SceneRecord> test =
      build_balanced_relation_set(cfg.model.scene, vocab, cfg.test_per_class, test_seed0);
  for (const SceneRecord& rec : test) {
    if (rec.scene.seed < test_seed0) throw std::logic_error("train/test seed overlap");
  }
  const std::vector<SampleRef> test_samples = flatten_samples(test);

  std::vector<AblationCellResult> cells;
  for (const AblationRow& row : rows) {
    AblationCellResult cell;
    cell.row = row.label;
    cell.flags = row.flags;
    for (std::uint64_t seed : cfg.seeds) {
      ModelConfig mc = cfg.model;
      mc.flags = row.flags;
      mc.init_seed = seed;
      Model model(mc);

      // row-independent derivation keeps seeds paired across rows
      PipelineConfig pc = cfg.pipeline;
      pc.stage1.seed = mix_seed(seed, 1);
      pc.stage2.seed = mix_seed(seed, 2);
      pc.stage3.seed = mix_seed(seed, 3);
      const PipelineResult pr = run_pipeline(model, train, pc);

      const std::int64_t total = model.scalar_count();
      const std::int64_t sge_total = model.sge_scalar_count();
      if ((sge_total > 0) != row.flags.sg) {
        throw std::logic_error("graph parameter inventory disagrees with the sg flag");
      }
      if (cell.seeds.empty()) {
        cell.scalar_count = total;
        cell.sge_scalar_count = sge_total;
        cell.stages_run = pr.stages_run;
      } else if (total != cell.scalar_count || pr.stages_run != cell.stages_run) {
        throw std::logic_error("cell structure varies across seeds");
      }

      cell.seeds.push_back(seed);
      cell.relation_accuracy.push_back(
          evaluate_relations(model, test_samples, AnswerSource::model).accuracy);
    }
    cell.median = median_of(cell.relation_accuracy);
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::string format_report_text(const std::vector<AblationCellResult>& cells) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "row"
     << "sg mp pr rd ts  " << std::setw(8) << "median" << std::setw(10) << "params"
     << std::setw(9) << "stages"
     << "per-seed accuracy\n";
  for (const AblationCellResult& c : cells) {
    auto yn = [](bool b) { return b ? "Y  " : "-  "; };
    os << std::left << std::setw(14) << c.row << yn(c.flags.sg) << yn(c.flags.mp)
       << yn(c.flags.prompt) << yn(c.flags.sge_d) << yn(c.flags.sge_t) << " "
       << std::setw(8) << std::fixed << std::setprecision(4) << c.median << std::setw(10)
       << c.scalar_count;
    std::string stages;
    for (std::size_t i = 0; i < c.stages_run.size(); ++i) {
      if (i > 0) stages += ",";
      stages += std::to_string(c.stages_run[i]);
    }
    os << std::setw(9) << stages;
    for (std::size_t i = 0; i < c.relation_accuracy.size(); ++i) {
      if (i > 0) os << " ";
      os << std::fixed << std::setprecision(4) << c.relation_accuracy[i];
    }
    os << "\n";
  }
  return os.str();
}

std::string format_report_jsonl(const std::vector<AblationCellResult>& cells) {
  std::string out;
  for (const AblationCellResult& c : cells) {
    nlohmann::ordered_json j;
    j["row"] = c.row;
    j["flags"] = {{"sg", c.flags.sg},
                  {"mp", c.flags.mp},
                  {"prompt", c.flags.prompt},
                  {"sge_d", c.flags.sge_d},
                  {"sge_t", c.flags.sge_t}};
    j["seeds"] = c.seeds;
    j["relation_accuracy"] = c.relation_accuracy;
    j["median"] = c.median;
    j["scalar_count"] = c.scalar_count;
    j["sge_scalar_count"] = c.sge_scalar_count;
    j["stages_run"] = c.stages_run;
    out += j.dump();
    out += "\n";
  }
  return out;
}

}  // namespace sge
