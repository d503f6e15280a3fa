#include "CLI11.hpp"

#include "sge/commands.hpp"

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

// Every value is optional so that file-provided settings survive unless the
// flag was actually given: precedence is command line > config file > defaults.
struct CommonCli {
  std::optional<std::string> config_path;
  std::optional<std::string> out_dir, dataset, checkpoint;
  std::optional<std::uint64_t> init_seed, data_seed;
  std::optional<int> train_scenes, val_scenes, test_scenes, test_per_class;
  std::optional<std::vector<std::uint64_t>> grid_seeds;
  std::optional<std::string> row;
  bool sge_d_on = false, sge_d_off = false;
  bool sge_t_on = false, sge_t_off = false;
  std::optional<double> lr[3];
  std::optional<int> steps[3], batch[3];
  std::optional<std::uint64_t> stage_seed[3];
};

void add_common(CLI::App* sub, CommonCli& c) {
  sub->add_option("--config", c.config_path, "JSON configuration file")
      ->check(CLI::ExistingFile);
  sub->add_option("--out", c.out_dir, "output directory (default $SGE_OUT_ROOT or ./out)");
  sub->add_option("--dataset", c.dataset, "dataset file path");
  sub->add_option("--checkpoint", c.checkpoint, "checkpoint file path");
  sub->add_option("--init-seed", c.init_seed, "model initialization seed");
  sub->add_option("--data-seed", c.data_seed, "first scene seed for generated data");
  sub->add_option("--train-scenes", c.train_scenes, "scenes in the train split");
  sub->add_option("--val-scenes", c.val_scenes, "scenes in the val split");
  sub->add_option("--test-scenes", c.test_scenes, "scenes in the test split");
  sub->add_option("--test-per-class", c.test_per_class,
                  "balanced relation test samples per answer class");
  sub->add_option("--grid-seeds", c.grid_seeds, "ablation grid seeds")->delimiter(',');
  sub->add_option("--row", c.row,
                  "structural flag set: full, sg+mp, sg+prompt, sg, or no-sg");
  sub->add_flag("--sge-d", c.sge_d_on, "use relation data");
  sub->add_flag("--no-sge-d", c.sge_d_off, "drop relation data");
  sub->add_flag("--sge-t", c.sge_t_on, "dedicated graph-alignment stage");
  sub->add_flag("--no-sge-t", c.sge_t_off, "fold relation data into the final stage");
  for (int i = 0; i < 3; ++i) {
    const std::string n = std::to_string(i + 1);
    sub->add_option("--lr" + n, c.lr[i], "stage " + n + " learning rate");
    sub->add_option("--steps" + n, c.steps[i], "stage " + n + " step count");
    sub->add_option("--batch" + n, c.batch[i], "stage " + n + " batch size");
    sub->add_option("--seed" + n, c.stage_seed[i], "stage " + n + " sampling seed");
  }
}

sge::AblationFlags row_flags(const std::string& row, const sge::AblationFlags& base) {
  sge::AblationFlags f = base;
  if (row == "full") {
    f.sg = f.mp = f.prompt = true;
  } else if (row == "sg+mp") {
    f.sg = f.mp = true;
    f.prompt = false;
  } else if (row == "sg+prompt") {
    f.sg = f.prompt = true;
    f.mp = false;
  } else if (row == "sg") {
    f.sg = true;
    f.mp = f.prompt = false;
  } else if (row == "no-sg") {
    f.sg = f.mp = f.prompt = false;
  } else {
    throw std::invalid_argument("unknown row \"" + row +
                                "\" (expected full, sg+mp, sg+prompt, sg, or no-sg)");
  }
  return f;
}

sge::RunConfig resolve_config(const CommonCli& c) {
  sge::RunConfig cfg;
  if (c.config_path) cfg = sge::load_run_config(*c.config_path);
  if (c.out_dir) cfg.paths.out_dir = *c.out_dir;
  if (c.dataset) cfg.paths.dataset = *c.dataset;
  if (c.checkpoint) cfg.paths.checkpoint = *c.checkpoint;
  if (c.init_seed) cfg.model.init_seed = *c.init_seed;
  if (c.data_seed) cfg.data.seed = *c.data_seed;
  if (c.train_scenes) cfg.data.train_scenes = *c.train_scenes;
  if (c.val_scenes) cfg.data.val_scenes = *c.val_scenes;
  if (c.test_scenes) cfg.data.test_scenes = *c.test_scenes;
  if (c.test_per_class) cfg.data.test_per_class = *c.test_per_class;
  if (c.grid_seeds) cfg.grid.seeds = *c.grid_seeds;
  if (c.row) cfg.model.flags = row_flags(*c.row, cfg.model.flags);
  if (c.sge_d_on && c.sge_d_off) throw std::invalid_argument("--sge-d conflicts with --no-sge-d");
  if (c.sge_t_on && c.sge_t_off) throw std::invalid_argument("--sge-t conflicts with --no-sge-t");
  if (c.sge_d_on) cfg.model.flags.sge_d = true;
  if (c.sge_d_off) cfg.model.flags.sge_d = false;
  if (c.sge_t_on) cfg.model.flags.sge_t = true;
  if (c.sge_t_off) cfg.model.flags.sge_t = false;
  sge::StageOverrides* stages[3] = {&cfg.stage1, &cfg.stage2, &cfg.stage3};
  for (int i = 0; i < 3; ++i) {
    if (c.lr[i]) stages[i]->learning_rate = *c.lr[i];
    if (c.steps[i]) stages[i]->steps = *c.steps[i];
    if (c.batch[i]) stages[i]->batch_size = *c.batch[i];
    if (c.stage_seed[i]) stages[i]->seed = *c.stage_seed[i];
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic scene-graph expression pipeline"};
  app.require_subcommand(1);

  CommonCli common;
  sge::TrainOptions train_opt;
  sge::EvalOptions eval_opt;
  sge::AblateOptions ablate_opt;
  sge::GradcheckOptions grad_opt;

  CLI::App* generate = app.add_subcommand("generate", "write train/val/test datasets");
  add_common(generate, common);

  CLI::App* train = app.add_subcommand("train", "run training stages, write checkpoints");
  add_common(train, common);
  train->add_option("--stages", train_opt.stages, "stages to run, ascending")
      ->delimiter(',');
  train->add_option("--resume", train_opt.resume, "checkpoint to resume from")
      ->check(CLI::ExistingFile);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a model on QA data");
  add_common(eval, common);
  eval->add_option("--answers", eval_opt.answers, "model, oracle, or constant-wrong");

  CLI::App* ablate = app.add_subcommand("ablate", "train and score the ablation grid");
  add_common(ablate, common);
  ablate->add_option("--rows", ablate_opt.rows, "components, recipes, or both");

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient verification");
  add_common(gradcheck, common);
  gradcheck->add_option("--boundary", grad_opt.boundary,
                        "all, sge, projection, or llm (default all)");
  gradcheck->add_flag("--inject-fault", grad_opt.inject_fault,
                      "corrupt one gradient to prove the checker catches it");

  CLI::App* inspect = app.add_subcommand("inspect", "print checkpoint metadata");
  add_common(inspect, common);

  CLI11_PARSE(app, argc, argv);

  try {
    const sge::RunConfig cfg = resolve_config(common);
    if (generate->parsed()) return sge::cmd_generate(cfg, std::cout);
    if (train->parsed()) return sge::cmd_train(cfg, train_opt, std::cout);
    if (eval->parsed()) return sge::cmd_eval(cfg, eval_opt, std::cout);
    if (ablate->parsed()) return sge::cmd_ablate(cfg, ablate_opt, std::cout);
    if (gradcheck->parsed()) return sge::cmd_gradcheck(cfg, grad_opt, std::cout);
    if (inspect->parsed()) return sge::cmd_inspect(cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
