#pragma once

// Central finite-difference oracle for tape gradients. Test-only; it calls the
// forward builder on perturbed copies and never touches the reverse sweep.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "sslcrop/autodiff.hpp"
#include "sslcrop/optim.hpp"

namespace sslcrop::testing {

using LossBuilder = std::function<ad::Var(ad::Tape&, const ad::ParameterSet&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

inline double evaluate(const LossBuilder& build, const ad::ParameterSet& params) {
  ad::Tape tape;
  return build(tape, params).value()[0];
}

/// Compares backward() of `analytic` against (f(x+h) - f(x-h)) / 2h of
/// `numeric` for every entry of every parameter. The two differ when the
/// analytic graph holds stop-gradient nodes: the numeric builder then freezes
/// those values as constants. Relative error uses max(|a|, |n|, floor).
inline GradCheckResult gradcheck(const LossBuilder& analytic_build, const LossBuilder& build,
                                 const ad::ParameterSet& params, double h = 1e-5,
                                 double floor = 1e-6) {
  ad::Tape tape;
  const ad::Var root = analytic_build(tape, params);
  const ad::GradientMap analytic = ad::backward(tape, root);

  GradCheckResult result;
  ad::ParameterSet probe = params;
  for (auto& [name, tensor] : probe) {
    const auto it = analytic.find(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double saved = tensor[i];
      tensor[i] = saved + h;
      const double up = evaluate(build, probe);
      tensor[i] = saved - h;
      const double down = evaluate(build, probe);
      tensor[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = it == analytic.end() ? 0.0 : it->second[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_parameter = name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

inline GradCheckResult gradcheck(const LossBuilder& build, const ad::ParameterSet& params,
                                 double h = 1e-5, double floor = 1e-6) {
  return gradcheck(build, build, params, h, floor);
}

}  // namespace sslcrop::testing
