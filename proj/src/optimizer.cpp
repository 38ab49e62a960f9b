#include "paid/optimizer.hpp"

#include <cmath>

#include "paid/errors.hpp"

namespace paid {

AdamW::AdamW(AdamWConfig cfg) : cfg_(cfg) {
  if (!(cfg_.learning_rate > 0.0)) throw ConfigError("adamw: learning_rate must be > 0");
  if (!(cfg_.beta1 > 0.0 && cfg_.beta1 < 1.0) || !(cfg_.beta2 > 0.0 && cfg_.beta2 < 1.0)) {
    throw ConfigError("adamw: betas must lie in (0, 1)");
  }
  if (cfg_.weight_decay < 0.0) throw ConfigError("adamw: weight_decay must be >= 0");
}

const AdamW::Moments* AdamW::moments(const std::string& name) const {
  auto it = state_.find(name);
  return it == state_.end() ? nullptr : &it->second;
}

void AdamW::step(std::span<const ParamView> params, double lr_scale) {
  ++step_;
  const double lr = cfg_.learning_rate * lr_scale;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (const ParamView& p : params) {
    if (p.value.size() != p.grad.size()) {
      throw ShapeError("adamw: gradient size mismatch for '" + p.name + "'");
    }
    auto [it, inserted] = state_.try_emplace(p.name);
    Moments& m = it->second;
    if (inserted) {
      m.first.assign(p.value.size(), 0.0);
      m.second.assign(p.value.size(), 0.0);
    } else if (m.first.size() != p.value.size()) {
      throw ShapeError("adamw: parameter '" + p.name + "' changed size");
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m.first[i] = cfg_.beta1 * m.first[i] + (1.0 - cfg_.beta1) * g;
      m.second[i] = cfg_.beta2 * m.second[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m.first[i] / bc1;
      const double vhat = m.second[i] / bc2;
      const double theta = p.value[i];
      p.value[i] = theta - lr * mhat / (std::sqrt(vhat) + cfg_.eps) - lr * cfg_.weight_decay * theta;
    }
  }
}

}  // namespace paid
