#include "dnet/adam.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dnet {

NamedGrads collect_grads(const NamedParams& params) {
  NamedGrads out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) {
    if (!t.has_grad())
      throw std::invalid_argument("collect_grads: parameter '" + name + "' has no gradient");
    auto g = t.grad();
    out.emplace_back(name, std::vector<double>(g.begin(), g.end()));
  }
  return out;
}

void adam_step(NamedParams& params, const NamedGrads& grads, AdamState& state,
               const AdamHyper& h) {
  if (h.lr <= 0.0) throw std::invalid_argument("adam_step: lr must be positive");
  if (h.beta1 < 0.0 || h.beta1 >= 1.0 || h.beta2 < 0.0 || h.beta2 >= 1.0)
    throw std::invalid_argument("adam_step: betas must lie in [0,1)");
  if (grads.size() != params.size()) {
    std::ostringstream os;
    os << "adam_step: " << params.size() << " parameters but " << grads.size() << " gradients";
    throw std::invalid_argument(os.str());
  }
  std::map<std::string, const std::vector<double>*> by_name;
  for (const auto& [name, g] : grads) {
    if (!by_name.emplace(name, &g).second)
      throw std::invalid_argument("adam_step: duplicate gradient for '" + name + "'");
  }

  // validate everything up front so a rejected call leaves params and state
  // untouched
  for (auto& [name, param] : params) {
    auto found = by_name.find(name);
    if (found == by_name.end())
      throw std::invalid_argument("adam_step: no gradient for parameter '" + name + "'");
    const std::vector<double>& g = *found->second;
    if (g.size() != static_cast<size_t>(param.numel())) {
      std::ostringstream os;
      os << "adam_step: gradient for '" << name << "' has " << g.size() << " entries, parameter"
         << " has " << param.numel();
      throw std::invalid_argument(os.str());
    }
    for (double gi : g)
      if (!std::isfinite(gi))
        throw std::invalid_argument("adam_step: non-finite gradient in '" + name + "'");
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);

  for (auto& [name, param] : params) {
    const std::vector<double>& g = *by_name.find(name)->second;
    auto pv = param.mutable_values();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(pv.size(), 0.0);
    if (v.empty()) v.assign(pv.size(), 0.0);
    for (size_t i = 0; i < pv.size(); ++i) {
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      pv[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
    }
  }
}

void zero_grads(NamedParams& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

}  // namespace dnet
