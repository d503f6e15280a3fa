#pragma once

#include "sge/runconfig.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace sge {

struct TrainOptions {
  std::vector<int> stages = {1, 2, 3};  // strictly ascending subset of {1,2,3}
  std::string resume;                   // checkpoint path; empty = fresh model
};

struct EvalOptions {
  std::string answers = "model";  // model | oracle | constant-wrong
};

struct AblateOptions {
  std::string rows = "components";  // components | recipes | both
};

struct GradcheckOptions {
  // all | sge | projection | llm. Each boundary gets its own shallow scalar
  // readout so finite differences stay far above cancellation noise.
  std::string boundary = "all";
  bool inject_fault = false;  // self-test: corrupt one analytic gradient
};

// Commands return a process exit status (0 = success) and write artifacts
// under the configured output directory. Identical (config, input files)
// produce identical output bytes. Invalid inputs throw.
int cmd_generate(const RunConfig& cfg, std::ostream& log);
int cmd_train(const RunConfig& cfg, const TrainOptions& opt, std::ostream& log);
int cmd_eval(const RunConfig& cfg, const EvalOptions& opt, std::ostream& log);
int cmd_ablate(const RunConfig& cfg, const AblateOptions& opt, std::ostream& log);
int cmd_gradcheck(const RunConfig& cfg, const GradcheckOptions& opt, std::ostream& log);
int cmd_inspect(const RunConfig& cfg, std::ostream& log);

}  // namespace sge
