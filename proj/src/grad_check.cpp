#include "sge/grad_check.hpp"

#include "sge/io_util.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace sge {

namespace {

// Error relative to the larger of the two gradients and the function's own
// magnitude: central differences of f cannot resolve derivatives below
// roughly eps*|f|/h, so gradients under that scale are judged against |f|
// instead of against themselves.
double rel_err(double a, double n, double f) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), f, 1e-8});
}

}  // namespace

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  os << "grad check: " << checks << " scalars, max rel err " << max_rel_err << "\n";
  for (const auto& e : worst) {
    os << "  " << e.param << "[" << e.index << "] analytic " << e.analytic << " numeric "
       << e.numeric << " rel " << e.rel_err << "\n";
  }
  return os.str();
}

GradCheckReport grad_check(ParamStore& params, const std::function<Tensor()>& loss_fn,
                           const GradCheckOptions& opts) {
  params.zero_grads();
  Tensor loss = loss_fn();
  backward(loss);
  const double f_mag = std::abs(loss.value());

  GradCheckReport report;
  for (Parameter* p : params.all()) {
    if (!p->tensor.requires_grad()) continue;
    Eigen::ArrayXd analytic = p->tensor.grad_or_zeros();
    const bool injected_here = !opts.inject_param.empty() &&
                               p->name == opts.inject_param &&
                               opts.inject_index < analytic.size();
    if (injected_here) analytic[opts.inject_index] += opts.inject_delta;

    std::vector<std::int64_t> indices;
    const std::int64_t n = p->tensor.size();
    if (opts.sample_per_param <= 0 || opts.sample_per_param >= n) {
      indices.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = i;
    } else {
      Rng rng(mix_seed(opts.seed, fnv1a64(p->name)));
      std::unordered_set<std::int64_t> seen;
      while (static_cast<std::int64_t>(indices.size()) < opts.sample_per_param) {
        const std::int64_t i = rng.uniform_int(0, n - 1);
        if (seen.insert(i).second) indices.push_back(i);
      }
      // an injected fault has to land in the checked set, or the self-test
      // silently verifies nothing
      if (injected_here && seen.insert(opts.inject_index).second) {
        indices.push_back(opts.inject_index);
      }
      std::sort(indices.begin(), indices.end());
    }

    Eigen::ArrayXd& vals = p->tensor.values_mut();
    for (std::int64_t i : indices) {
      const double saved = vals[i];
      vals[i] = saved + opts.h;
      const double f_plus = loss_fn().value();
      vals[i] = saved - opts.h;
      const double f_minus = loss_fn().value();
      vals[i] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * opts.h);
      GradCheckEntry e;
      e.param = p->name;
      e.index = i;
      e.analytic = analytic[i];
      e.numeric = numeric;
      e.rel_err = rel_err(e.analytic, numeric, f_mag);
      ++report.checks;
      report.max_rel_err = std::max(report.max_rel_err, e.rel_err);
      report.worst.push_back(std::move(e));
      std::sort(report.worst.begin(), report.worst.end(),
                [](const GradCheckEntry& a, const GradCheckEntry& b) {
                  return a.rel_err > b.rel_err;
                });
      if (report.worst.size() > opts.keep_worst) report.worst.resize(opts.keep_worst);
    }
  }
  return report;
}

}  // namespace sge
