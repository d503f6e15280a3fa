#pragma once

#include "sge/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace sge {

struct GradCheckOptions {
  double h = 1e-6;                // central difference step
  std::int64_t sample_per_param = 0;  // 0 = check every scalar
  std::uint64_t seed = 1;         // index sampling when sample_per_param > 0
  std::size_t keep_worst = 8;
  // Self-test hook: adds inject_delta to the analytic gradient of one scalar
  // so a test can confirm the checker flags a wrong derivative.
  std::string inject_param;
  std::int64_t inject_index = 0;
  double inject_delta = 0.0;
};

struct GradCheckEntry {
  std::string param;
  std::int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::int64_t checks = 0;
  std::vector<GradCheckEntry> worst;  // descending by rel_err
  bool pass(double tol) const { return checks > 0 && max_rel_err < tol; }
  std::string to_string() const;
};

// Compares backward() gradients of every requires_grad parameter in `params`
// against central differences of `loss_fn`. `loss_fn` must rebuild the graph
// from the parameter leaves on every call and return a scalar.
GradCheckReport grad_check(ParamStore& params, const std::function<Tensor()>& loss_fn,
                           const GradCheckOptions& opts = {});

}  // namespace sge
