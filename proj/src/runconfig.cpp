#include "sge/runconfig.hpp"

#include "sge/io_util.hpp"

#include <cstdlib>
#include <set>
#include <stdexcept>

namespace sge {

namespace {

// Strict object reader: every key must be consumed, so config typos fail
// loudly instead of silently meaning "use the default".
class ObjReader {
 public:
  ObjReader(const ordered_json& j, std::string ctx) : j_(j), ctx_(std::move(ctx)) {
    if (!j_.is_object()) throw std::invalid_argument(ctx_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(ctx_ + "." + key + ": " + e.what());
    }
  }

  template <typename T>
  void get_opt(const char* key, std::optional<T>& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(ctx_ + "." + key + ": " + e.what());
    }
  }

  const ordered_json* child(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (seen_.count(it.key()) == 0) {
        throw std::invalid_argument(ctx_ + ": unknown key \"" + it.key() + "\"");
      }
    }
  }

 private:
  const ordered_json& j_;
  std::string ctx_;
  std::set<std::string> seen_;
};

ordered_json scene_json(const SceneConfig& c) {
  return {{"canvas_h", c.canvas_h},           {"canvas_w", c.canvas_w},
          {"n_entities_min", c.n_entities_min}, {"n_entities_max", c.n_entities_max},
          {"category_count", c.category_count}, {"predicate_count", c.predicate_count},
          {"nest_prob", c.nest_prob},           {"min_pair_sep", c.min_pair_sep},
          {"max_pair_gap", c.max_pair_gap}};
}

void scene_from(const ordered_json& j, SceneConfig& c, const std::string& ctx) {
  ObjReader r(j, ctx);
  r.get("canvas_h", c.canvas_h);
  r.get("canvas_w", c.canvas_w);
  r.get("n_entities_min", c.n_entities_min);
  r.get("n_entities_max", c.n_entities_max);
  r.get("category_count", c.category_count);
  r.get("predicate_count", c.predicate_count);
  r.get("nest_prob", c.nest_prob);
  r.get("min_pair_sep", c.min_pair_sep);
  r.get("max_pair_gap", c.max_pair_gap);
  r.done();
}

ordered_json encoder_json(const EncoderConfig& c) {
  return {{"d_e", c.d_e}, {"h_v", c.h_v}, {"w_v", c.w_v}, {"noise_sigma", c.noise_sigma}};
}

void encoder_from(const ordered_json& j, EncoderConfig& c, const std::string& ctx) {
  ObjReader r(j, ctx);
  r.get("d_e", c.d_e);
  r.get("h_v", c.h_v);
  r.get("w_v", c.w_v);
  r.get("noise_sigma", c.noise_sigma);
  r.done();
}

ordered_json sge_json(const SGEConfig& c) {
  return {{"d_e", c.d_e},
          {"d_g", c.d_g},
          {"d_t", c.d_t},
          {"mp_layers", c.mp_layers},
          {"mp_heads", c.mp_heads},
          {"prompt_heads", c.prompt_heads},
          {"sample_points_cap", c.sample_points_cap}};
}

void sge_from(const ordered_json& j, SGEConfig& c, const std::string& ctx) {
  ObjReader r(j, ctx);
  r.get("d_e", c.d_e);
  r.get("d_g", c.d_g);
  r.get("d_t", c.d_t);
  r.get("mp_layers", c.mp_layers);
  r.get("mp_heads", c.mp_heads);
  r.get("prompt_heads", c.prompt_heads);
  r.get("sample_points_cap", c.sample_points_cap);
  r.done();
}

// vocab is derived from the scene's category count, so it never serializes
ordered_json llm_json(const LLMConfig& c) {
  return {{"d_llm", c.d_llm},
          {"layers", c.layers},
          {"heads", c.heads},
          {"max_len", c.max_len},
          {"ffn_mult", c.ffn_mult}};
}

void llm_from(const ordered_json& j, LLMConfig& c, const std::string& ctx) {
  ObjReader r(j, ctx);
  r.get("d_llm", c.d_llm);
  r.get("layers", c.layers);
  r.get("heads", c.heads);
  r.get("max_len", c.max_len);
  r.get("ffn_mult", c.ffn_mult);
  r.done();
}

ordered_json flags_json(const AblationFlags& f) {
  return {{"sg", f.sg},
          {"mp", f.mp},
          {"prompt", f.prompt},
          {"sge_d", f.sge_d},
          {"sge_t", f.sge_t}};
}

void flags_from(const ordered_json& j, AblationFlags& f, const std::string& ctx) {
  ObjReader r(j, ctx);
  r.get("sg", f.sg);
  r.get("mp", f.mp);
  r.get("prompt", f.prompt);
  r.get("sge_d", f.sge_d);
  r.get("sge_t", f.sge_t);
  r.done();
}

ordered_json stage_json(const StageOverrides& o) {
  ordered_json j = ordered_json::object();
  if (o.learning_rate) j["learning_rate"] = *o.learning_rate;
  if (o.steps) j["steps"] = *o.steps;
  if (o.batch_size) j["batch_size"] = *o.batch_size;
  if (o.seed) j["seed"] = *o.seed;
  return j;
}

void stage_from(const ordered_json& j, StageOverrides& o, const std::string& ctx) {
  ObjReader r(j, ctx);
  r.get_opt("learning_rate", o.learning_rate);
  r.get_opt("steps", o.steps);
  r.get_opt("batch_size", o.batch_size);
  r.get_opt("seed", o.seed);
  r.done();
}

}  // namespace

std::string RunConfig::resolved_out_dir() const {
  if (!paths.out_dir.empty()) return paths.out_dir;
  if (const char* env = std::getenv("SGE_OUT_ROOT"); env != nullptr && env[0] != '\0') {
    return env;
  }
  return "out";
}

StageOverrides RunConfig::stage_overrides(int stage_id) const {
  switch (stage_id) {
    case 1: return stage1;
    case 2: return stage2;
    case 3: return stage3;
    default: throw std::invalid_argument("stage id must be 1, 2, or 3");
  }
}

ordered_json model_config_json(const ModelConfig& cfg) {
  return {{"scene", scene_json(cfg.scene)},  {"encoder", encoder_json(cfg.enc)},
          {"sge", sge_json(cfg.sge)},        {"llm", llm_json(cfg.llm)},
          {"flags", flags_json(cfg.flags)},  {"init_seed", cfg.init_seed}};
}

ModelConfig model_config_from_json(const ordered_json& j) {
  ModelConfig cfg;
  ObjReader r(j, "model");
  if (const auto* c = r.child("scene")) scene_from(*c, cfg.scene, "model.scene");
  if (const auto* c = r.child("encoder")) encoder_from(*c, cfg.enc, "model.encoder");
  if (const auto* c = r.child("sge")) sge_from(*c, cfg.sge, "model.sge");
  if (const auto* c = r.child("llm")) llm_from(*c, cfg.llm, "model.llm");
  if (const auto* c = r.child("flags")) flags_from(*c, cfg.flags, "model.flags");
  r.get("init_seed", cfg.init_seed);
  r.done();
  return cfg;
}

ordered_json topology_json(const ModelConfig& cfg) {
  ordered_json j = model_config_json(cfg);
  j.erase("init_seed");
  return j;
}

ordered_json to_json(const RunConfig& cfg) {
  ordered_json j;
  j["model"] = model_config_json(cfg.model);
  j["stages"] = {{"1", stage_json(cfg.stage1)},
                 {"2", stage_json(cfg.stage2)},
                 {"3", stage_json(cfg.stage3)}};
  j["data"] = {{"train_scenes", cfg.data.train_scenes},
               {"val_scenes", cfg.data.val_scenes},
               {"test_scenes", cfg.data.test_scenes},
               {"test_per_class", cfg.data.test_per_class},
               {"seed", cfg.data.seed}};
  j["grid"] = {{"seeds", cfg.grid.seeds}};
  j["gradcheck"] = {{"tolerance", cfg.gradcheck.tolerance},
                    {"sample_per_param", cfg.gradcheck.sample_per_param},
                    {"seed", cfg.gradcheck.seed},
                    {"scene_seed", cfg.gradcheck.scene_seed}};
  j["paths"] = {{"out_dir", cfg.paths.out_dir},
                {"dataset", cfg.paths.dataset},
                {"checkpoint", cfg.paths.checkpoint}};
  return j;
}

RunConfig run_config_from_json(const ordered_json& j) {
  RunConfig cfg;
  ObjReader r(j, "config");
  if (const auto* c = r.child("model")) cfg.model = model_config_from_json(*c);
  if (const auto* c = r.child("stages")) {
    ObjReader s(*c, "stages");
    if (const auto* v = s.child("1")) stage_from(*v, cfg.stage1, "stages.1");
    if (const auto* v = s.child("2")) stage_from(*v, cfg.stage2, "stages.2");
    if (const auto* v = s.child("3")) stage_from(*v, cfg.stage3, "stages.3");
    s.done();
  }
  if (const auto* c = r.child("data")) {
    ObjReader d(*c, "data");
    d.get("train_scenes", cfg.data.train_scenes);
    d.get("val_scenes", cfg.data.val_scenes);
    d.get("test_scenes", cfg.data.test_scenes);
    d.get("test_per_class", cfg.data.test_per_class);
    d.get("seed", cfg.data.seed);
    d.done();
  }
  if (const auto* c = r.child("grid")) {
    ObjReader g(*c, "grid");
    g.get("seeds", cfg.grid.seeds);
    g.done();
  }
  if (const auto* c = r.child("gradcheck")) {
    ObjReader g(*c, "gradcheck");
    g.get("tolerance", cfg.gradcheck.tolerance);
    g.get("sample_per_param", cfg.gradcheck.sample_per_param);
    g.get("seed", cfg.gradcheck.seed);
    g.get("scene_seed", cfg.gradcheck.scene_seed);
    g.done();
  }
  if (const auto* c = r.child("paths")) {
    ObjReader p(*c, "paths");
    p.get("out_dir", cfg.paths.out_dir);
    p.get("dataset", cfg.paths.dataset);
    p.get("checkpoint", cfg.paths.checkpoint);
    p.done();
  }
  r.done();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  const auto buf = read_file(path);
  ordered_json j;
  try {
    j = ordered_json::parse(buf.begin(), buf.end());
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config file " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace sge
