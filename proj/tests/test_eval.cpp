#include "doctest.h"

#include "sge/evaluation.hpp"
#include "sge/io_util.hpp"

#include "json.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <stdexcept>

using namespace sge;

namespace {

ModelConfig eval_cfg() {
  ModelConfig cfg;
  cfg.scene.canvas_h = 32;
  cfg.scene.canvas_w = 32;
  cfg.enc.d_e = 12;
  cfg.enc.h_v = 4;
  cfg.enc.w_v = 4;
  cfg.sge.d_e = 12;
  cfg.sge.d_g = 8;
  cfg.sge.d_t = 8;
  cfg.sge.mp_layers = 1;
  cfg.llm.d_llm = 8;
  cfg.llm.layers = 1;
  cfg.llm.max_len = 40;
  return cfg;
}

}  // namespace

TEST_CASE("balanced relation set") {
  SceneConfig scene = eval_cfg().scene;
  Vocab vocab(scene.category_count);

  SUBCASE("every answer class appears exactly n_per_class times") {
    auto records = build_balanced_relation_set(scene, vocab, 3, 50);
    CHECK(records.size() == 21);
    std::map<int, int> per_class;
    for (const auto& rec : records) {
      REQUIRE(rec.qa.size() == 1);
      CHECK(rec.qa[0].task == Task::relation);
      ++per_class[rec.qa[0].answer.at(0)];
    }
    CHECK(per_class.size() == 7);
    for (const auto& [token, count] : per_class) {
      INFO("answer token " << token);
      CHECK(count == 3);
    }
    const auto legal = vocab.relation_answer_tokens();
    for (const auto& [token, count] : per_class) {
      CHECK(std::count(legal.begin(), legal.end(), token) == 1);
    }
  }

  SUBCASE("construction is deterministic") {
    auto a = build_balanced_relation_set(scene, vocab, 2, 7);
    auto b = build_balanced_relation_set(scene, vocab, 2, 7);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].scene.seed == b[i].scene.seed);
      CHECK(a[i].qa[0].prompt == b[i].qa[0].prompt);
      CHECK(a[i].qa[0].answer == b[i].qa[0].answer);
    }
  }

  SUBCASE("scene seeds never precede the requested start") {
    auto records = build_balanced_relation_set(scene, vocab, 2, 1234);
    for (const auto& rec : records) CHECK(rec.scene.seed >= 1234);
  }

  SUBCASE("rejects nonpositive class size") {
    CHECK_THROWS_AS(build_balanced_relation_set(scene, vocab, 0, 1),
                    std::invalid_argument);
  }

  SUBCASE("infeasible class demands are diagnosed") {
    SceneConfig flat = scene;
    flat.nest_prob = 0.0;  // containment answers can never occur
    CHECK_THROWS_AS(build_balanced_relation_set(flat, vocab, 1, 1), std::runtime_error);
  }
}

TEST_CASE("harness soundness") {
  ModelConfig cfg = eval_cfg();
  Model model(cfg);
  auto records = build_balanced_relation_set(cfg.scene, model.vocab(), 2, 90);
  auto samples = flatten_samples(records);
  REQUIRE(samples.size() == 14);

  SUBCASE("oracle answers score exactly 1.0") {
    EvalResult r = evaluate_relations(model, samples, AnswerSource::oracle);
    CHECK(r.accuracy == 1.0);
    CHECK(r.correct == r.total);
    CHECK(r.total == 14);
  }

  SUBCASE("a constant wrong answer scores exactly 0.0") {
    EvalResult r = evaluate_relations(model, samples, AnswerSource::constant_wrong);
    CHECK(r.accuracy == 0.0);
    CHECK(r.correct == 0);
  }

  SUBCASE("model predictions stay inside the candidate set") {
    const auto legal = model.vocab().relation_answer_tokens();
    for (const auto& s : samples) {
      auto pred = model.predict_answer(*s.scene, *s.qa, legal);
      REQUIRE(pred.size() == 1);
      CHECK(std::count(legal.begin(), legal.end(), pred[0]) == 1);
    }
    EvalResult r = evaluate_relations(model, samples);
    CHECK(r.accuracy >= 0.0);
    CHECK(r.accuracy <= 1.0);
    CHECK(evaluate_relations(model, samples).accuracy == r.accuracy);  // deterministic
  }

  SUBCASE("empty and mistyped sample sets are rejected") {
    CHECK_THROWS_AS(evaluate_relations(model, {}), std::invalid_argument);
    std::vector<SceneRecord> caption_records(1);
    caption_records[0].scene = generate_scene(11, cfg.scene);
    caption_records[0].qa = {make_caption_qa(caption_records[0].scene, model.vocab())};
    auto caption_refs = flatten_samples(caption_records);
    CHECK_THROWS_AS(evaluate_relations(model, caption_refs), std::invalid_argument);
  }
}

TEST_CASE("counting and caption evaluation") {
  ModelConfig cfg = eval_cfg();
  Model model(cfg);
  auto records = build_records(cfg.scene, model.vocab(), 4, 70);
  REQUIRE(records.size() == 4);

  std::vector<SampleRef> counting, captions;
  for (const auto& rec : records) {
    for (const auto& qa : rec.qa) {
      if (qa.task == Task::counting) counting.push_back({&rec.scene, &qa});
      if (qa.task == Task::caption) captions.push_back({&rec.scene, &qa});
    }
  }
  REQUIRE_FALSE(counting.empty());
  REQUIRE(captions.size() == 4);

  CHECK(evaluate_counting(model, counting, AnswerSource::oracle).accuracy == 1.0);
  CHECK(evaluate_counting(model, counting, AnswerSource::constant_wrong).accuracy == 0.0);
  EvalResult cm = evaluate_counting(model, counting);
  CHECK(cm.accuracy >= 0.0);
  CHECK(cm.accuracy <= 1.0);

  CHECK(evaluate_captions(model, captions, AnswerSource::oracle).accuracy == 1.0);
  CHECK(evaluate_captions(model, captions, AnswerSource::constant_wrong).accuracy == 0.0);
  EvalResult cap = evaluate_captions(model, captions);
  // caption accuracy counts tokens, not samples
  std::int64_t tokens = 0;
  for (const auto& s : captions) tokens += static_cast<std::int64_t>(s.qa->answer.size());
  CHECK(cap.total == tokens);
}

TEST_CASE("untrained accuracy sits near chance on a balanced set") {
  ModelConfig cfg = eval_cfg();
  Model model(cfg);
  auto records = build_balanced_relation_set(cfg.scene, model.vocab(), 20, 400);
  auto samples = flatten_samples(records);
  REQUIRE(samples.size() == 140);
  EvalResult r = evaluate_relations(model, samples);
  CHECK(r.accuracy > 1.0 / 7.0 - 0.1);
  CHECK(r.accuracy < 1.0 / 7.0 + 0.1);
}

TEST_CASE("median helper") {
  CHECK(median_of({3.0}) == 3.0);
  CHECK(median_of({5.0, 1.0, 3.0}) == 3.0);
  CHECK(median_of({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK_THROWS_AS(median_of({}), std::invalid_argument);
}

TEST_CASE("grid row catalogs") {
  auto iii = component_grid_rows();
  REQUIRE(iii.size() == 5);
  CHECK(iii[0].label == "no-sg");
  CHECK(iii[1].label == "sg");
  CHECK(iii[2].label == "sg+mp");
  CHECK(iii[3].label == "sg+prompt");
  CHECK(iii[4].label == "full");
  for (const auto& row : iii) {
    CHECK(row.flags.sge_d);
    CHECK(row.flags.sge_t);
    row.flags.validate();
  }

  auto iv = recipe_grid_rows();
  REQUIRE(iv.size() == 3);
  CHECK(iv[0].label == "sge-staged");
  CHECK(iv[0].flags.sge_t);
  CHECK(iv[1].label == "sge-joint");
  CHECK_FALSE(iv[1].flags.sge_t);
  CHECK(iv[1].flags.sg);
  CHECK(iv[2].label == "no-sge-data");
  CHECK_FALSE(iv[2].flags.sg);
  CHECK(iv[2].flags.sge_d);
  for (const auto& row : iv) row.flags.validate();
}

TEST_CASE("ablation grid") {
  AblationGridConfig gc;
  gc.model = eval_cfg();
  gc.train_scenes = 3;
  gc.test_per_class = 2;
  gc.seeds = {1, 2};
  gc.data_seed = 500;
  StageOverrides tiny;
  tiny.steps = 1;
  tiny.batch_size = 2;
  gc.pipeline.stage1 = configure_stage(1, tiny);
  gc.pipeline.stage2 = configure_stage(2, tiny);
  gc.pipeline.stage3 = configure_stage(3, tiny);

  SUBCASE("structure, parameter inventory, and stage sets per row") {
    auto cells = run_ablation_grid(component_grid_rows(), gc);
    REQUIRE(cells.size() == 5);
    std::map<std::string, const AblationCellResult*> by_row;
    for (const auto& c : cells) {
      by_row[c.row] = &c;
      CHECK(c.seeds == gc.seeds);
      CHECK(c.relation_accuracy.size() == 2);
      CHECK(c.median == median_of(c.relation_accuracy));
      // the graph-alignment stage needs a graph pathway to align
      const std::vector<int> want = c.flags.sg ? std::vector<int>{1, 2, 3}
                                               : std::vector<int>{1, 3};
      CHECK(c.stages_run == want);
    }
    CHECK(by_row["no-sg"]->sge_scalar_count == 0);
    CHECK(by_row["sg"]->sge_scalar_count > 0);
    // parameter inventory grows strictly with each structural addition
    CHECK(by_row["no-sg"]->scalar_count < by_row["sg"]->scalar_count);
    CHECK(by_row["sg"]->scalar_count < by_row["sg+mp"]->scalar_count);
    CHECK(by_row["sg"]->scalar_count < by_row["sg+prompt"]->scalar_count);
    CHECK(by_row["sg+mp"]->scalar_count < by_row["full"]->scalar_count);
    CHECK(by_row["sg+prompt"]->scalar_count < by_row["full"]->scalar_count);
  }

  SUBCASE("no-sg rows skip the graph-alignment stage") {
    auto cells = run_ablation_grid(recipe_grid_rows(), gc);
    REQUIRE(cells.size() == 3);
    CHECK(cells[0].stages_run == std::vector<int>{1, 2, 3});
    CHECK(cells[1].stages_run == std::vector<int>{1, 3});  // joint: folded into stage 3
    CHECK(cells[2].stages_run == std::vector<int>{1, 3});
  }

  SUBCASE("grids are deterministic") {
    auto rows = std::vector<AblationRow>{component_grid_rows()[0], component_grid_rows()[4]};
    auto a = run_ablation_grid(rows, gc);
    auto b = run_ablation_grid(rows, gc);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].relation_accuracy == b[i].relation_accuracy);
      CHECK(a[i].median == b[i].median);
    }
  }

  SUBCASE("bad configurations are rejected") {
    CHECK_THROWS_AS(run_ablation_grid({}, gc), std::invalid_argument);
    AblationGridConfig bad = gc;
    bad.seeds = {};
    CHECK_THROWS_AS(run_ablation_grid(component_grid_rows(), bad), std::invalid_argument);
    bad = gc;
    bad.train_scenes = 0;
    CHECK_THROWS_AS(run_ablation_grid(component_grid_rows(), bad), std::invalid_argument);
  }
}

TEST_CASE("report emitters") {
  AblationCellResult c;
  c.row = "full";
  c.flags = AblationFlags{};
  c.seeds = {1, 2, 3};
  c.relation_accuracy = {0.5, 0.75, 0.25};
  c.median = 0.5;
  c.scalar_count = 1234;
  c.sge_scalar_count = 100;
  c.stages_run = {1, 2, 3};
  AblationCellResult d = c;
  d.row = "no-sg";
  d.flags.sg = d.flags.mp = d.flags.prompt = false;
  d.sge_scalar_count = 0;
  d.stages_run = {1, 3};

  const std::string text = format_report_text({c, d});
  CHECK(text.find("full") != std::string::npos);
  CHECK(text.find("no-sg") != std::string::npos);
  CHECK(text.find("0.5000") != std::string::npos);
  CHECK(text.find("1,2,3") != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);  // header + 2 rows

  const std::string jsonl = format_report_jsonl({c, d});
  std::istringstream lines(jsonl);
  std::string line;
  std::vector<nlohmann::json> parsed;
  while (std::getline(lines, line)) parsed.push_back(nlohmann::json::parse(line));
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0]["row"] == "full");
  CHECK(parsed[0]["median"] == 0.5);
  CHECK(parsed[0]["flags"]["sg"] == true);
  CHECK(parsed[0]["seeds"] == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(parsed[1]["row"] == "no-sg");
  CHECK(parsed[1]["flags"]["sg"] == false);
  CHECK(parsed[1]["sge_scalar_count"] == 0);
  CHECK(parsed[1]["stages_run"] == std::vector<int>{1, 3});
}
