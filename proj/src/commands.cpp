#include "sge/commands.hpp"

#include "sge/checkpoint.hpp"
#include "sge/evaluation.hpp"
#include "sge/grad_check.hpp"
#include "sge/io_util.hpp"

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace sge {

namespace {

namespace fs = std::filesystem;

std::string out_path(const RunConfig& cfg, const std::string& name) {
  const fs::path dir = cfg.resolved_out_dir();
  fs::create_directories(dir);
  return (dir / name).string();
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(16) << v;
  return os.str();
}

ordered_json eval_row(const std::string& task, const EvalResult& r) {
  return {{"task", task},
          {"accuracy", r.accuracy},
          {"correct", r.correct},
          {"total", r.total}};
}

AnswerSource parse_answers(const std::string& s) {
  if (s == "model") return AnswerSource::model;
  if (s == "oracle") return AnswerSource::oracle;
  if (s == "constant-wrong" || s == "constant_wrong") return AnswerSource::constant_wrong;
  throw std::invalid_argument("unknown answer source \"" + s +
                              "\" (expected model, oracle, or constant-wrong)");
}

ordered_json plan_json(const StagePlan& p) {
  return {{"stage", p.stage_id},
          {"trainable_patterns", p.trainable_patterns},
          {"learning_rate", p.learning_rate},
          {"steps", p.steps},
          {"batch_size", p.batch_size},
          {"seed", p.seed}};
}

std::string split_path(const RunConfig& cfg, const char* split) {
  return out_path(cfg, std::string(split) + ".sgesyn");
}

}  // namespace

int cmd_generate(const RunConfig& cfg, std::ostream& log) {
  cfg.model.scene.validate();
  const Vocab vocab(cfg.model.scene.category_count);

  std::uint64_t next = cfg.data.seed;
  struct Split {
    const char* name;
    int n;
    std::vector<SceneRecord> records;
    std::uint64_t first_seed = 0, end_seed = 0;
  };
  Split splits[3] = {{"train", cfg.data.train_scenes, {}, 0, 0},
                     {"val", cfg.data.val_scenes, {}, 0, 0},
                     {"test", cfg.data.test_scenes, {}, 0, 0}};
  std::set<std::uint64_t> seen_seeds;
  std::size_t total = 0;
  for (Split& s : splits) {
    s.first_seed = next;
    s.records = build_records(cfg.model.scene, vocab, s.n, next, &next);
    s.end_seed = next;
    for (const SceneRecord& rec : s.records) seen_seeds.insert(rec.scene.seed);
    total += s.records.size();
  }
  if (seen_seeds.size() != total) throw std::logic_error("splits share a scene seed");

  ordered_json manifest;
  manifest["config"] = to_json(cfg);
  for (Split& s : splits) {
    const std::string path = split_path(cfg, s.name);
    save_dataset(s.records, path);
    std::size_t qa_total = 0;
    for (const SceneRecord& rec : s.records) qa_total += rec.qa.size();
    manifest["splits"][s.name] = {{"file", fs::path(path).filename().string()},
                                  {"scenes", s.records.size()},
                                  {"qa_samples", qa_total},
                                  {"seed_begin", s.first_seed},
                                  {"seed_end", s.end_seed}};
    log << s.name << ": " << s.records.size() << " scenes, " << qa_total
        << " qa samples -> " << path << "\n";
  }
  write_text_atomic(out_path(cfg, "generate.json"), manifest.dump(2) + "\n");
  return 0;
}

int cmd_train(const RunConfig& cfg, const TrainOptions& opt, std::ostream& log) {
  if (opt.stages.empty()) throw std::invalid_argument("cmd_train: no stages requested");
  for (std::size_t i = 0; i < opt.stages.size(); ++i) {
    if (opt.stages[i] < 1 || opt.stages[i] > 3) {
      throw std::invalid_argument("cmd_train: stage ids must be in {1,2,3}");
    }
    if (i > 0 && opt.stages[i] <= opt.stages[i - 1]) {
      throw std::invalid_argument("cmd_train: stages must be strictly ascending");
    }
  }

  const std::string data_path =
      cfg.paths.dataset.empty() ? split_path(cfg, "train") : cfg.paths.dataset;
  const std::vector<SceneRecord> records = load_dataset(data_path);

  Model model(cfg.model);
  std::set<int> provenance;
  if (!opt.resume.empty()) {
    provenance = load_checkpoint(opt.resume, model);
    log << "resumed from " << opt.resume << " (stages {";
    for (int s : provenance) log << " " << s;
    log << " })\n";
  }
  if (!provenance.empty() && opt.stages.front() <= *provenance.rbegin()) {
    throw std::invalid_argument("cmd_train: requested stage " +
                                std::to_string(opt.stages.front()) +
                                " is not after the resumed provenance");
  }

  const AblationFlags& flags = cfg.model.flags;
  ordered_json summary;
  summary["config"] = to_json(cfg);
  summary["dataset"] = data_path;
  summary["stages"] = ordered_json::array();
  std::string trace_lines;

  for (int stage : opt.stages) {
    if (stage == 2 && !(flags.sg && flags.sge_d && flags.sge_t)) {
      log << "skipping stage 2: the flag set folds relation data into stage 3\n";
      continue;
    }
    StagePlan plan = configure_stage(stage, cfg.stage_overrides(stage));
    if (!cfg.stage_overrides(stage).seed) {
      plan.seed = mix_seed(cfg.model.init_seed, static_cast<std::uint64_t>(stage));
    }
    AdamW adamw(AdamWConfig{});  // fresh moments per stage, as in run_pipeline
    const TrainTrace trace =
        train_stage(model, plan, select_samples(records, stage, flags), adamw);
    provenance.insert(stage);

    const std::string ckpt = out_path(cfg, "stage" + std::to_string(stage) + ".ckpt");
    save_checkpoint(ckpt, model, &adamw, provenance);

    for (const TrainStepRecord& s : trace.steps) {
      ordered_json line = {{"stage", stage},
                           {"step", s.step},
                           {"loss", s.loss},
                           {"grad_norm", s.grad_norm},
                           {"lr", s.lr}};
      trace_lines += line.dump();
      trace_lines += "\n";
    }
    summary["stages"].push_back(
        {{"plan", plan_json(plan)},
         {"steps", trace.steps.size()},
         {"final_loss", trace.steps.empty() ? 0.0 : trace.steps.back().loss},
         {"params_checksum", hex64(trace.final_params_checksum)},
         {"checkpoint", fs::path(ckpt).filename().string()}});
    log << "stage " << stage << ": " << trace.steps.size() << " steps, final loss "
        << (trace.steps.empty() ? 0.0 : trace.steps.back().loss) << ", checkpoint "
        << ckpt << "\n";
  }

  summary["provenance"] = provenance;
  summary["final_params_checksum"] = hex64(params_checksum(model.params()));
  write_text_atomic(out_path(cfg, "train_trace.jsonl"), trace_lines);
  write_text_atomic(out_path(cfg, "train.json"), summary.dump(2) + "\n");
  log << "final params checksum " << hex64(params_checksum(model.params())) << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const EvalOptions& opt, std::ostream& log) {
  const AnswerSource source = parse_answers(opt.answers);
  Model model(cfg.model);
  if (!cfg.paths.checkpoint.empty()) load_checkpoint(cfg.paths.checkpoint, model);

  ordered_json report;
  report["config"] = to_json(cfg);
  report["answers"] = opt.answers;
  report["checkpoint"] = cfg.paths.checkpoint;
  report["rows"] = ordered_json::array();

  std::vector<SceneRecord> records;
  if (!cfg.paths.dataset.empty()) {
    records = load_dataset(cfg.paths.dataset);
    report["dataset"] = cfg.paths.dataset;
  } else {
    // no dataset: balanced relation set from a seed block far past the
    // training data to keep the splits disjoint
    records = build_balanced_relation_set(cfg.model.scene, model.vocab(),
                                          cfg.data.test_per_class,
                                          cfg.data.seed + (1u << 20));
    report["dataset"] = "balanced:" + std::to_string(cfg.data.test_per_class) +
                        " per class";
  }

  std::vector<SampleRef> rel, cnt, cap;
  for (const SceneRecord& rec : records) {
    for (const QASample& qa : rec.qa) {
      if (qa.task == Task::relation) rel.push_back({&rec.scene, &qa});
      if (qa.task == Task::counting) cnt.push_back({&rec.scene, &qa});
      if (qa.task == Task::caption) cap.push_back({&rec.scene, &qa});
    }
  }
  if (!rel.empty()) {
    report["rows"].push_back(eval_row("relation", evaluate_relations(model, rel, source)));
  }
  if (!cnt.empty()) {
    report["rows"].push_back(eval_row("counting", evaluate_counting(model, cnt, source)));
  }
  if (!cap.empty()) {
    report["rows"].push_back(eval_row("caption", evaluate_captions(model, cap, source)));
  }
  if (report["rows"].empty()) throw std::invalid_argument("cmd_eval: dataset holds no QA");

  for (const auto& row : report["rows"]) {
    log << std::left << std::setw(10) << row["task"].get<std::string>() << std::fixed
        << std::setprecision(4) << row["accuracy"].get<double>() << "  ("
        << row["correct"].get<std::int64_t>() << "/" << row["total"].get<std::int64_t>()
        << ")\n";
  }
  write_text_atomic(out_path(cfg, "eval.json"), report.dump(2) + "\n");
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const AblateOptions& opt, std::ostream& log) {
  std::vector<AblationRow> rows;
  if (opt.rows == "components") {
    rows = component_grid_rows();
  } else if (opt.rows == "recipes") {
    rows = recipe_grid_rows();
  } else if (opt.rows == "both") {
    rows = component_grid_rows();
    for (AblationRow& r : recipe_grid_rows()) rows.push_back(std::move(r));
  } else {
    throw std::invalid_argument("unknown row set \"" + opt.rows +
                                "\" (expected components, recipes, or both)");
  }

  AblationGridConfig gc;
  gc.model = cfg.model;
  gc.pipeline.stage1 = configure_stage(1, cfg.stage_overrides(1));
  gc.pipeline.stage2 = configure_stage(2, cfg.stage_overrides(2));
  gc.pipeline.stage3 = configure_stage(3, cfg.stage_overrides(3));
  gc.train_scenes = cfg.data.train_scenes;
  gc.test_per_class = cfg.data.test_per_class;
  gc.seeds = cfg.grid.seeds;
  gc.data_seed = cfg.data.seed;

  const std::vector<AblationCellResult> cells = run_ablation_grid(rows, gc);
  const std::string text = format_report_text(cells);
  log << text;

  write_text_atomic(out_path(cfg, "ablation_" + opt.rows + ".txt"), text);
  write_text_atomic(out_path(cfg, "ablation_" + opt.rows + ".jsonl"),
                    format_report_jsonl(cells));
  ordered_json meta;
  meta["config"] = to_json(cfg);
  meta["rows"] = opt.rows;
  write_text_atomic(out_path(cfg, "ablate.json"), meta.dump(2) + "\n");
  return 0;
}

namespace {

Tensor randn_tensor(Rng& rng, Shape shape, double scale) {
  std::vector<double> v(static_cast<std::size_t>(shape_size(shape)));
  for (double& x : v) x = rng.normal() * scale;
  return Tensor::from_values(std::move(shape), std::move(v));
}

struct BoundaryReport {
  std::string name;
  GradCheckReport report;
};

// Checks one module boundary: `build` fills the store and returns a scalar
// loss closure whose depth from every parameter is small, so central
// differences resolve the gradients far above cancellation noise.
BoundaryReport check_boundary(
    const std::string& name, const RunConfig& cfg, bool inject,
    const std::function<std::function<Tensor()>(ParamStore&)>& build) {
  ParamStore store;
  std::function<Tensor()> loss_fn = build(store);
  for (Parameter* p : store.all()) p->tensor.set_requires_grad(true);

  GradCheckOptions gco;
  gco.sample_per_param = cfg.gradcheck.sample_per_param;
  gco.seed = cfg.gradcheck.seed;
  if (inject && store.count() > 0) {
    gco.inject_param = store.all().front()->name;
    gco.inject_index = 0;
    gco.inject_delta = 1e-2;
  }

  BoundaryReport br;
  br.name = name;
  if (store.count() > 0) br.report = grad_check(store, loss_fn, gco);
  return br;
}

// Mean of a fixed random projection of x; gradient magnitude stays at the
// scale of x's own values.
Tensor readout(const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = randn_tensor(rng, x.shape(), 1.0);
  return scale(sum_all(hadamard(x, w)), 1.0 / static_cast<double>(x.size()));
}

}  // namespace

int cmd_gradcheck(const RunConfig& cfg, const GradcheckOptions& opt, std::ostream& log) {
  const AblationFlags& flags = cfg.model.flags;
  flags.validate();
  if (cfg.model.enc.d_e != cfg.model.sge.d_e || cfg.model.sge.d_t != cfg.model.llm.d_llm) {
    throw std::invalid_argument("cmd_gradcheck: encoder/sge/llm widths disagree");
  }

  // fixed fixture: the first harvested scene that carries a relation sample
  std::uint64_t seed = cfg.gradcheck.scene_seed;
  const Vocab vocab(cfg.model.scene.category_count);
  std::vector<SceneRecord> records;
  const QASample* qa = nullptr;
  while (qa == nullptr) {
    auto batch = build_records(cfg.model.scene, vocab, 1, seed, &seed);
    records.push_back(std::move(batch.front()));
    for (const QASample& s : records.back().qa) {
      if (s.task == Task::relation) {
        qa = &s;
        break;
      }
    }
  }
  const SyntheticScene& scene = records.back().scene;
  const std::uint64_t master = cfg.model.init_seed;
  const std::uint64_t fix = mix_seed(cfg.gradcheck.seed, 0x5eed);

  std::vector<BoundaryReport> reports;
  bool inject_pending = opt.inject_fault;
  auto want = [&](const char* name) {
    return opt.boundary == "all" || opt.boundary == name;
  };
  auto run = [&](const char* name,
                 const std::function<std::function<Tensor()>(ParamStore&)>& build) {
    BoundaryReport br = check_boundary(name, cfg, inject_pending, build);
    if (br.report.checks > 0) inject_pending = false;
    reports.push_back(std::move(br));
  };

  if (want("sge")) {
    // pooling -> graph build -> message passing -> prompt injection, with the
    // feature map and prompt as extra differentiable inputs
    run("sge", [&](ParamStore& store) -> std::function<Tensor()> {
      if (!flags.sg) return {};
      SGEConfig sc = cfg.model.sge;
      SGEParams sp = make_sge_params(store, sc, SGEOptions{flags.mp, flags.prompt},
                                     {2, 3}, master);
      Rng rng(mix_seed(fix, 1));
      Tensor fmap = render_feature_map(scene, cfg.model.enc);
      Tensor prompt = randn_tensor(rng, {5, sc.d_t}, 1.0);
      Parameter& pf = store.add("input.fmap", fmap);
      Parameter& pp = store.add("input.prompt", prompt);
      return [&cfg, &scene, sp, sc, f = pf.tensor, p = pp.tensor, fix] {
        SceneGraph g = sge_forward(f, scene.masks, scene.config.canvas_h,
                                   scene.config.canvas_w, p, sp, sc);
        return readout(g.node_features, mix_seed(fix, 2));
      };
    });
  }

  if (want("projection")) {
    run("projection", [&](ParamStore& store) -> std::function<Tensor()> {
      ProjectionParams proj =
          make_projection_params(store, cfg.model.enc.d_e, cfg.model.sge.d_g,
                                 cfg.model.llm.d_llm, flags.sg, {1, 3}, {2, 3}, master);
      Rng rng(mix_seed(fix, 3));
      Tensor fmap = render_feature_map(scene, cfg.model.enc);
      SceneGraph g;
      g.node_features = randn_tensor(rng, {3, cfg.model.sge.d_g}, 1.0);
      g.activated = true;
      const bool sg = flags.sg;
      return [fmap, g, proj, sg, fix] {
        Tensor loss = readout(project_visual(fmap, proj), mix_seed(fix, 4));
        if (sg) loss = add(loss, readout(project_graph(g, proj), mix_seed(fix, 5)));
        return loss;
      };
    });
  }

  if (want("llm")) {
    // sentinels, embeddings, positions, decoder stack, head, and the masked
    // next-token loss
    run("llm", [&](ParamStore& store) -> std::function<Tensor()> {
      LLMConfig lc = cfg.model.llm;
      lc.vocab = vocab.size();
      LLMParams lp = make_llm_params(store, lc, flags.sg, {3}, {2, 3}, master);
      Rng rng(mix_seed(fix, 6));
      Tensor visual = randn_tensor(rng, {4, lc.d_llm}, 1.0);
      Tensor graph = randn_tensor(rng, {3, lc.d_llm}, 1.0);
      std::vector<int> text_ids = qa->prompt;
      text_ids.insert(text_ids.end(), qa->answer.begin(), qa->answer.end());
      const auto answer_start = static_cast<std::int64_t>(qa->prompt.size());
      const auto answer_len = static_cast<std::int64_t>(qa->answer.size());
      const bool sg = flags.sg;
      return [visual, graph, lp, lc, text_ids, answer_start, answer_len, sg] {
        Tensor text = embed_tokens(lp, text_ids, lc.vocab);
        TokenSequence seq = assemble_sequence(visual, sg ? &graph : nullptr, text, lp,
                                              text_ids, answer_start, answer_len);
        return autoregressive_loss(llm_forward(seq, lp, lc), seq);
      };
    });
  }

  if (reports.empty()) {
    throw std::invalid_argument("unknown boundary \"" + opt.boundary +
                                "\" (expected all, sge, projection, or llm)");
  }

  bool pass = true;
  std::int64_t checks = 0;
  double max_rel_err = 0.0;
  ordered_json j;
  j["config"] = to_json(cfg);
  j["boundary"] = opt.boundary;
  j["tolerance"] = cfg.gradcheck.tolerance;
  j["reports"] = ordered_json::array();
  for (const BoundaryReport& br : reports) {
    const bool ok = br.report.checks == 0 || br.report.pass(cfg.gradcheck.tolerance);
    pass = pass && ok;
    checks += br.report.checks;
    max_rel_err = std::max(max_rel_err, br.report.max_rel_err);
    ordered_json r = {{"boundary", br.name},
                      {"checks", br.report.checks},
                      {"max_rel_err", br.report.max_rel_err},
                      {"pass", ok},
                      {"worst", ordered_json::array()}};
    for (const GradCheckEntry& e : br.report.worst) {
      r["worst"].push_back({{"param", e.param},
                            {"index", e.index},
                            {"analytic", e.analytic},
                            {"numeric", e.numeric},
                            {"rel_err", e.rel_err}});
    }
    j["reports"].push_back(std::move(r));
    if (br.report.checks == 0) {
      log << br.name << ": no trainable parameters; nothing to check\n";
    } else {
      log << br.name << ": " << br.report.checks << " checks, max rel err "
          << br.report.max_rel_err << (ok ? "" : "  <-- FAIL") << "\n";
    }
  }
  j["pass"] = pass;
  write_text_atomic(out_path(cfg, "gradcheck.json"), j.dump(2) + "\n");

  log << (pass ? "PASS" : "FAIL") << " (" << checks << " checks, max rel err "
      << max_rel_err << ", tolerance " << cfg.gradcheck.tolerance << ")\n";
  return pass ? 0 : 1;
}

int cmd_inspect(const RunConfig& cfg, std::ostream& log) {
  if (cfg.paths.checkpoint.empty()) {
    throw std::invalid_argument("cmd_inspect: no checkpoint path given");
  }
  const CheckpointMeta meta = inspect_checkpoint(cfg.paths.checkpoint);
  log << "checkpoint " << cfg.paths.checkpoint << "\n";
  log << "format version " << meta.version << "\n";
  log << "stages completed:";
  for (int s : meta.stages_completed) log << " " << s;
  log << "\n";
  log << "parameters: " << meta.params.size() << " tensors, " << meta.scalar_count
      << " scalars\n";
  for (const auto& [name, shape] : meta.params) {
    log << "  " << std::left << std::setw(24) << name << shape_str(shape) << "\n";
  }
  log << "optimizer state: " << meta.optimizer_params.size() << " tensors\n";
  log << "topology:\n" << meta.topology.dump(2) << "\n";
  return 0;
}

}  // namespace sge
