#include "doctest.h"

#include "sge/checkpoint.hpp"
#include "sge/commands.hpp"
#include "sge/evaluation.hpp"
#include "sge/io_util.hpp"
#include "sge/runconfig.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

using namespace sge;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_cfg() {
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

RunConfig tiny_run(const std::string& out_dir) {
  RunConfig cfg;
  cfg.model = tiny_cfg();
  cfg.data.train_scenes = 4;
  cfg.data.val_scenes = 2;
  cfg.data.test_scenes = 2;
  cfg.data.test_per_class = 2;
  cfg.data.seed = 300;
  StageOverrides tiny;
  tiny.steps = 1;
  tiny.batch_size = 2;
  cfg.stage1 = cfg.stage2 = cfg.stage3 = tiny;
  cfg.paths.out_dir = out_dir;
  return cfg;
}

std::string fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("sge_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

bool same_bytes(const std::string& a, const std::string& b) {
  return read_file(a) == read_file(b);
}

ordered_json read_json(const std::string& path) {
  const auto buf = read_file(path);
  return ordered_json::parse(buf.begin(), buf.end());
}

}  // namespace

TEST_CASE("run config json round trip") {
  RunConfig cfg;
  cfg.model = tiny_cfg();
  cfg.model.flags.mp = false;
  cfg.stage2.steps = 7;
  cfg.stage2.learning_rate = 3e-4;
  cfg.data.train_scenes = 11;
  cfg.grid.seeds = {4, 5};
  cfg.paths.dataset = "d.sgesyn";

  const ordered_json j = to_json(cfg);
  const RunConfig back = run_config_from_json(j);
  CHECK(to_json(back).dump() == j.dump());
  CHECK(back.model.enc.d_e == 12);
  CHECK_FALSE(back.model.flags.mp);
  REQUIRE(back.stage2.steps.has_value());
  CHECK(*back.stage2.steps == 7);
  CHECK_FALSE(back.stage1.steps.has_value());
  CHECK(back.grid.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(back.paths.dataset == "d.sgesyn");
}

TEST_CASE("run config parsing is strict") {
  CHECK_THROWS_WITH_AS(run_config_from_json({{"modle", ordered_json::object()}}),
                       doctest::Contains("unknown key"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      run_config_from_json({{"model", {{"scene", {{"canvas_x", 3}}}}}}),
      doctest::Contains("unknown key"), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"stages", {{"2", {{"steps", "many"}}}}}}),
                  std::invalid_argument);

  // partial objects leave the other defaults alone
  const RunConfig cfg = run_config_from_json({{"stages", {{"2", {{"steps", 5}}}}}});
  REQUIRE(cfg.stage2.steps.has_value());
  CHECK(*cfg.stage2.steps == 5);
  CHECK_FALSE(cfg.stage2.learning_rate.has_value());
  CHECK(cfg.data.train_scenes == 64);
}

TEST_CASE("config file loading and out-dir resolution") {
  const std::string dir = fresh_dir("cfgfile");
  const std::string path = dir + "/run.json";
  write_text_atomic(path, R"({"data": {"train_scenes": 9}})");
  const RunConfig cfg = load_run_config(path);
  CHECK(cfg.data.train_scenes == 9);

  write_text_atomic(path, "{not json");
  CHECK_THROWS_AS(load_run_config(path), std::invalid_argument);

  RunConfig rc;
  rc.paths.out_dir = "explicit";
  CHECK(rc.resolved_out_dir() == "explicit");
  rc.paths.out_dir.clear();
  setenv("SGE_OUT_ROOT", (dir + "/envroot").c_str(), 1);
  CHECK(rc.resolved_out_dir() == dir + "/envroot");
  unsetenv("SGE_OUT_ROOT");
  CHECK(rc.resolved_out_dir() == "out");
}

TEST_CASE("topology json identifies structure, not initialization") {
  ModelConfig a = tiny_cfg();
  ModelConfig b = a;
  b.init_seed = 99;
  CHECK(topology_json(a).dump() == topology_json(b).dump());
  CHECK(model_config_json(a).dump() != model_config_json(b).dump());
  b.llm.d_llm = 16;
  b.sge.d_t = 16;
  CHECK(topology_json(a).dump() != topology_json(b).dump());

  const ModelConfig back = model_config_from_json(model_config_json(a));
  CHECK(model_config_json(back).dump() == model_config_json(a).dump());
}

TEST_CASE("checkpoint round trip") {
  const std::string dir = fresh_dir("ckpt");
  ModelConfig mc = tiny_cfg();
  Model model(mc);

  // one real training step so values and moments are nontrivial
  auto records = build_records(mc.scene, model.vocab(), 2, 40);
  StageOverrides o;
  o.steps = 1;
  o.batch_size = 2;
  AdamW opt(AdamWConfig{});
  train_stage(model, configure_stage(1, o), select_samples(records, 1, mc.flags), opt);

  const std::string p1 = dir + "/a.ckpt";
  save_checkpoint(p1, model, &opt, {1});

  SUBCASE("save, load, save is byte-identical") {
    Model fresh(mc);
    AdamW opt2(AdamWConfig{});
    const std::set<int> stages = load_checkpoint(p1, fresh, &opt2);
    CHECK(stages == std::set<int>{1});
    CHECK(params_checksum(fresh.params()) == params_checksum(model.params()));
    REQUIRE(opt2.state().size() == opt.state().size());
    for (const auto& [name, st] : opt.state()) {
      REQUIRE(opt2.state().count(name) == 1);
      const AdamW::State& st2 = opt2.state().at(name);
      CHECK(st2.t == st.t);
      CHECK((st2.m == st.m).all());
      CHECK((st2.v == st.v).all());
    }
    const std::string p2 = dir + "/b.ckpt";
    save_checkpoint(p2, fresh, &opt2, stages);
    CHECK(same_bytes(p1, p2));
  }

  SUBCASE("provenance can be extended on a later save") {
    Model fresh(mc);
    std::set<int> stages = load_checkpoint(p1, fresh);
    stages.insert(2);
    const std::string p2 = dir + "/c.ckpt";
    save_checkpoint(p2, fresh, nullptr, stages);
    CHECK(inspect_checkpoint(p2).stages_completed == std::set<int>{1, 2});
    CHECK(inspect_checkpoint(p2).optimizer_params.empty());
  }

  SUBCASE("topology mismatch fails before mutation") {
    ModelConfig other = mc;
    other.llm.d_llm = 16;
    other.sge.d_t = 16;
    Model victim(other);
    const std::uint64_t before = params_checksum(victim.params());
    AdamW untouched(AdamWConfig{});
    CHECK_THROWS_AS(load_checkpoint(p1, victim, &untouched), io_error);
    try {
      load_checkpoint(p1, victim, &untouched);
    } catch (const io_error& e) {
      CHECK(e.error_kind() == io_error::kind::mismatch);
      CHECK(std::string(e.what()).find("topology") != std::string::npos);
    }
    CHECK(params_checksum(victim.params()) == before);
    CHECK(untouched.state().empty());
  }

  SUBCASE("truncation is a checksum error and loads nothing") {
    auto bytes = read_file(p1);
    bytes.resize(bytes.size() - 7);
    const std::string p3 = dir + "/trunc.ckpt";
    write_file_atomic(p3, bytes);
    Model victim(mc);
    const std::uint64_t before = params_checksum(victim.params());
    try {
      load_checkpoint(p3, victim);
      FAIL("expected io_error");
    } catch (const io_error& e) {
      CHECK(e.error_kind() == io_error::kind::bad_checksum);
    }
    CHECK(params_checksum(victim.params()) == before);
  }

  SUBCASE("foreign magic and foreign version are distinct errors") {
    const std::string p4 = dir + "/magic.ckpt";
    write_text_atomic(p4, "NOTACKPT\nwhatever padding to pass the length check....");
    Model victim(mc);
    try {
      load_checkpoint(p4, victim);
      FAIL("expected io_error");
    } catch (const io_error& e) {
      CHECK(e.error_kind() == io_error::kind::bad_magic);
    }

    // rewrite the version field and fix up the checksum
    auto bytes = read_file(p1);
    bytes[9] = 2;  // little-endian u32 version right after the 9-byte magic
    const std::uint32_t crc = crc32(bytes.data() + 9, bytes.size() - 9 - 4);
    for (int i = 0; i < 4; ++i) {
      bytes[bytes.size() - 4 + static_cast<std::size_t>(i)] =
          static_cast<std::uint8_t>((crc >> (8 * i)) & 0xff);
    }
    const std::string p5 = dir + "/version.ckpt";
    write_file_atomic(p5, bytes);
    try {
      load_checkpoint(p5, victim);
      FAIL("expected io_error");
    } catch (const io_error& e) {
      CHECK(e.error_kind() == io_error::kind::bad_version);
    }
  }

  SUBCASE("inspect reports the stored metadata") {
    const CheckpointMeta meta = inspect_checkpoint(p1);
    CHECK(meta.version == 1);
    CHECK(meta.stages_completed == std::set<int>{1});
    CHECK(meta.params.size() == model.params().count());
    CHECK(meta.scalar_count == model.scalar_count());
    CHECK(meta.topology.dump() == topology_json(mc).dump());
  }
}

TEST_CASE("cmd_generate") {
  const std::string d1 = fresh_dir("gen1");
  const std::string d2 = fresh_dir("gen2");
  std::ostringstream log;
  REQUIRE(cmd_generate(tiny_run(d1), log) == 0);
  REQUIRE(cmd_generate(tiny_run(d2), log) == 0);

  SUBCASE("same data config produces byte-identical datasets") {
    for (const char* f : {"train.sgesyn", "val.sgesyn", "test.sgesyn"}) {
      CHECK(same_bytes(d1 + "/" + f, d2 + "/" + f));
    }
    // the manifest embeds the resolved config (including out_dir), so it is
    // only byte-stable for a rerun of the exact same config
    const auto manifest = read_file(d1 + "/generate.json");
    REQUIRE(cmd_generate(tiny_run(d1), log) == 0);
    CHECK(read_file(d1 + "/generate.json") == manifest);
  }

  SUBCASE("splits have the requested sizes and disjoint scene seeds") {
    auto train = load_dataset(d1 + "/train.sgesyn");
    auto val = load_dataset(d1 + "/val.sgesyn");
    auto test = load_dataset(d1 + "/test.sgesyn");
    CHECK(train.size() == 4);
    CHECK(val.size() == 2);
    CHECK(test.size() == 2);
    std::set<std::uint64_t> seeds;
    for (const auto* split : {&train, &val, &test}) {
      for (const auto& rec : *split) seeds.insert(rec.scene.seed);
    }
    CHECK(seeds.size() == 8);
  }

  SUBCASE("manifest embeds the resolved config") {
    const ordered_json manifest = read_json(d1 + "/generate.json");
    CHECK(manifest["config"]["model"]["scene"]["canvas_h"] == 32);
    CHECK(manifest["config"]["data"]["train_scenes"] == 4);
    CHECK(manifest["splits"]["train"]["scenes"] == 4);
  }
}

TEST_CASE("cmd_train") {
  const std::string dir = fresh_dir("train");
  std::ostringstream log;
  RunConfig cfg = tiny_run(dir);
  REQUIRE(cmd_generate(cfg, log) == 0);

  SUBCASE("single stage, then resume into the next") {
    TrainOptions t1;
    t1.stages = {1};
    REQUIRE(cmd_train(cfg, t1, log) == 0);
    CHECK(inspect_checkpoint(dir + "/stage1.ckpt").stages_completed == std::set<int>{1});
    CHECK_FALSE(fs::exists(dir + "/stage2.ckpt"));

    TrainOptions t2;
    t2.stages = {2};
    t2.resume = dir + "/stage1.ckpt";
    REQUIRE(cmd_train(cfg, t2, log) == 0);
    CHECK(inspect_checkpoint(dir + "/stage2.ckpt").stages_completed ==
          std::set<int>{1, 2});

    TrainOptions bad;
    bad.stages = {2};
    bad.resume = dir + "/stage2.ckpt";
    CHECK_THROWS_AS(cmd_train(cfg, bad, log), std::invalid_argument);
  }

  SUBCASE("full run writes one checkpoint per stage and reruns identically") {
    REQUIRE(cmd_train(cfg, TrainOptions{}, log) == 0);
    for (int s : {1, 2, 3}) {
      CHECK(fs::exists(dir + "/stage" + std::to_string(s) + ".ckpt"));
    }
    const auto first = read_file(dir + "/train.json");
    const auto first_ckpt = read_file(dir + "/stage3.ckpt");
    REQUIRE(cmd_train(cfg, TrainOptions{}, log) == 0);
    CHECK(read_file(dir + "/train.json") == first);
    CHECK(read_file(dir + "/stage3.ckpt") == first_ckpt);

    const ordered_json summary = read_json(dir + "/train.json");
    CHECK(summary["config"]["model"]["llm"]["d_llm"] == 8);
    CHECK(summary["provenance"] == std::set<int>{1, 2, 3});
    CHECK(summary["stages"].size() == 3);
    // trace log: one line per step across the three 1-step stages
    std::ifstream trace(dir + "/train_trace.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(trace, line)) {
      const ordered_json j = ordered_json::parse(line);
      CHECK(j["step"] == 0);
      ++lines;
    }
    CHECK(lines == 3);
  }

  SUBCASE("no-graph flag set skips stage 2") {
    RunConfig plain = cfg;
    plain.model.flags.sg = false;
    plain.model.flags.mp = false;
    plain.model.flags.prompt = false;
    REQUIRE(cmd_train(plain, TrainOptions{}, log) == 0);
    CHECK(fs::exists(dir + "/stage1.ckpt"));
    CHECK_FALSE(fs::exists(dir + "/stage2.ckpt"));
    CHECK(fs::exists(dir + "/stage3.ckpt"));
    CHECK(inspect_checkpoint(dir + "/stage3.ckpt").stages_completed ==
          std::set<int>{1, 3});
  }

  SUBCASE("invalid stage requests are rejected") {
    TrainOptions bad;
    bad.stages = {};
    CHECK_THROWS_AS(cmd_train(cfg, bad, log), std::invalid_argument);
    bad.stages = {3, 1};
    CHECK_THROWS_AS(cmd_train(cfg, bad, log), std::invalid_argument);
    bad.stages = {0};
    CHECK_THROWS_AS(cmd_train(cfg, bad, log), std::invalid_argument);
  }
}

TEST_CASE("cmd_eval") {
  const std::string dir = fresh_dir("eval");
  std::ostringstream log;
  RunConfig cfg = tiny_run(dir);
  REQUIRE(cmd_generate(cfg, log) == 0);
  REQUIRE(cmd_train(cfg, TrainOptions{}, log) == 0);
  cfg.paths.dataset = dir + "/test.sgesyn";
  cfg.paths.checkpoint = dir + "/stage3.ckpt";

  SUBCASE("oracle answers give accuracy 1.0 on every row") {
    EvalOptions eo;
    eo.answers = "oracle";
    REQUIRE(cmd_eval(cfg, eo, log) == 0);
    const ordered_json report = read_json(dir + "/eval.json");
    REQUIRE(report["rows"].size() >= 2);
    for (const auto& row : report["rows"]) CHECK(row["accuracy"] == 1.0);
  }

  SUBCASE("constant wrong answers give exactly 0.0") {
    EvalOptions eo;
    eo.answers = "constant-wrong";
    REQUIRE(cmd_eval(cfg, eo, log) == 0);
    for (const auto& row : read_json(dir + "/eval.json")["rows"]) {
      CHECK(row["accuracy"] == 0.0);
    }
  }

  SUBCASE("model answers rerun to identical bytes") {
    REQUIRE(cmd_eval(cfg, EvalOptions{}, log) == 0);
    const auto first = read_file(dir + "/eval.json");
    REQUIRE(cmd_eval(cfg, EvalOptions{}, log) == 0);
    CHECK(read_file(dir + "/eval.json") == first);
  }

  SUBCASE("no dataset falls back to a balanced relation set") {
    RunConfig balanced = cfg;
    balanced.paths.dataset.clear();
    REQUIRE(cmd_eval(balanced, EvalOptions{}, log) == 0);
    const ordered_json report = read_json(dir + "/eval.json");
    REQUIRE(report["rows"].size() == 1);
    CHECK(report["rows"][0]["task"] == "relation");
    CHECK(report["rows"][0]["total"] == 14);
  }

  SUBCASE("mismatched checkpoint topology is an error") {
    RunConfig other = cfg;
    other.model.llm.layers = 2;
    CHECK_THROWS_AS(cmd_eval(other, EvalOptions{}, log), io_error);
  }
}

TEST_CASE("cmd_ablate") {
  const std::string dir = fresh_dir("ablate");
  std::ostringstream log;
  RunConfig cfg = tiny_run(dir);
  cfg.data.train_scenes = 3;
  cfg.grid.seeds = {1, 2};

  AblateOptions ao;
  ao.rows = "components";
  REQUIRE(cmd_ablate(cfg, ao, log) == 0);
  std::ifstream jsonl(dir + "/ablation_components.jsonl");
  std::string line;
  std::vector<ordered_json> rows;
  while (std::getline(jsonl, line)) rows.push_back(ordered_json::parse(line));
  REQUIRE(rows.size() == 5);
  CHECK(rows[0]["row"] == "no-sg");
  CHECK(rows[4]["row"] == "full");
  CHECK(rows[4]["seeds"].size() == 2);

  const auto first_txt = read_file(dir + "/ablation_components.txt");
  REQUIRE(cmd_ablate(cfg, ao, log) == 0);
  CHECK(read_file(dir + "/ablation_components.txt") == first_txt);

  AblateOptions bad;
  bad.rows = "everything";
  CHECK_THROWS_AS(cmd_ablate(cfg, bad, log), std::invalid_argument);
}

TEST_CASE("cmd_gradcheck") {
  const std::string dir = fresh_dir("gradcheck");
  std::ostringstream log;
  RunConfig cfg = tiny_run(dir);
  cfg.gradcheck.sample_per_param = 6;  // keep the unit test quick

  SUBCASE("default boundaries pass and report to json") {
    REQUIRE(cmd_gradcheck(cfg, GradcheckOptions{}, log) == 0);
    const ordered_json j = read_json(dir + "/gradcheck.json");
    CHECK(j["pass"] == true);
    REQUIRE(j["reports"].size() == 3);
    for (const auto& r : j["reports"]) {
      CHECK(r["pass"] == true);
      CHECK(r["checks"].get<int>() > 0);
      CHECK(r["max_rel_err"].get<double>() < 1e-5);
    }
  }

  SUBCASE("an injected analytic fault fails with nonzero status") {
    GradcheckOptions go;
    go.inject_fault = true;
    CHECK(cmd_gradcheck(cfg, go, log) == 1);
    CHECK(read_json(dir + "/gradcheck.json")["pass"] == false);
  }

  SUBCASE("a boundary with no parameters passes as an empty report") {
    RunConfig plain = cfg;
    plain.model.flags.sg = false;
    plain.model.flags.mp = false;
    plain.model.flags.prompt = false;
    GradcheckOptions go;
    go.boundary = "sge";
    REQUIRE(cmd_gradcheck(plain, go, log) == 0);
    const ordered_json j = read_json(dir + "/gradcheck.json");
    CHECK(j["pass"] == true);
    REQUIRE(j["reports"].size() == 1);
    CHECK(j["reports"][0]["checks"] == 0);
  }

  SUBCASE("unknown boundary names are rejected") {
    GradcheckOptions go;
    go.boundary = "everything";
    CHECK_THROWS_AS(cmd_gradcheck(cfg, go, log), std::invalid_argument);
  }
}

TEST_CASE("cmd_inspect") {
  const std::string dir = fresh_dir("inspect");
  std::ostringstream log;
  RunConfig cfg = tiny_run(dir);
  REQUIRE(cmd_generate(cfg, log) == 0);
  TrainOptions t1;
  t1.stages = {1};
  REQUIRE(cmd_train(cfg, t1, log) == 0);

  cfg.paths.checkpoint = dir + "/stage1.ckpt";
  std::ostringstream out;
  REQUIRE(cmd_inspect(cfg, out) == 0);
  const std::string text = out.str();
  CHECK(text.find("format version 1") != std::string::npos);
  CHECK(text.find("stages completed: 1") != std::string::npos);
  CHECK(text.find("proj.wv.w") != std::string::npos);

  RunConfig no_ckpt = tiny_run(dir);
  CHECK_THROWS_AS(cmd_inspect(no_ckpt, out), std::invalid_argument);
}
