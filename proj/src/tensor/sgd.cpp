#include <set>

#include "sslcrop/error.hpp"
#include "sslcrop/optim.hpp"

namespace sslcrop::ad {

void sgd_step(ParameterSet& params, ParameterSet& momentum, const GradientMap& grads,
              const std::vector<std::string>& trainable, const SgdOptions& options) {
  const std::set<std::string> wanted(trainable.begin(), trainable.end());
  for (const auto& [name, _] : grads) {
    if (!wanted.contains(name)) throw ContractError("gradient for non-trainable key " + name);
  }
  for (const auto& name : wanted) {
    if (!grads.contains(name)) throw ContractError("missing gradient for " + name);
    if (!params.contains(name)) throw ContractError("unknown parameter " + name);
  }

  for (const auto& name : wanted) {
    Tensor& theta = params.at(name);
    const Tensor& g = grads.at(name);
    if (g.shape() != theta.shape()) {
      throw DimensionError("gradient for " + name + " has shape " + shape_string(g.shape()) +
                           ", parameter has " + shape_string(theta.shape()));
    }
    auto [it, _] = momentum.try_emplace(name, Tensor(theta.shape()));
    Tensor& m = it->second;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double step = g[i] + options.weight_decay * theta[i];
      m[i] = options.momentum * m[i] + step;
      theta[i] -= options.lr * m[i];
    }
  }
}

}  // namespace sslcrop::ad
