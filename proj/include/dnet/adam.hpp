#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dnet/tensor.hpp"

namespace dnet {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment estimates keyed by parameter name, plus the shared
// step counter t.
struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;
using NamedGrads = std::vector<std::pair<std::string, std::vector<double>>>;

// Snapshot of each parameter's accumulated gradient, in parameter order.
// Rejects parameters that have no gradient yet (by name).
NamedGrads collect_grads(const NamedParams& params);

// One Adam update over every parameter. t increments once per call;
// bias-corrected moments follow
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2,
//   p -= lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)   (eps outside the root).
// Every parameter must have exactly one same-shaped grad entry; non-finite
// gradient entries are rejected naming the parameter.
void adam_step(NamedParams& params, const NamedGrads& grads, AdamState& state,
               const AdamHyper& hyper);

// Clears accumulated gradients; afterwards they read as absent.
void zero_grads(NamedParams& params);

}  // namespace dnet
