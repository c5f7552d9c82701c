#pragma once

#include <map>
#include <string>
#include <vector>

#include "sslcrop/autodiff.hpp"
#include "sslcrop/tensor.hpp"

namespace sslcrop::ad {

using ParameterSet = std::map<std::string, Tensor>;

struct SgdOptions {
  double lr = 0.0016612;
  double momentum = 0.9;
  double weight_decay = 0.0005;
};

/// One step of SGD with momentum and coupled weight decay:
///   g' = g + wd * theta;  m = momentum * m + g';  theta -= lr * m
/// `grads` must hold exactly the `trainable` names. Missing momentum
/// buffers start at zero.
void sgd_step(ParameterSet& params, ParameterSet& momentum, const GradientMap& grads,
              const std::vector<std::string>& trainable, const SgdOptions& options);

}  // namespace sslcrop::ad
