#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>

#include "paid/numkit.hpp"
#include "paid/paidlayer.hpp"

namespace paid {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double eps = 1e-8;
};

// Adaptive moments with bias correction and decoupled weight decay:
//
//   m <- b1 m + (1 - b1) g
//   v <- b2 v + (1 - b2) g²
//   θ <- θ - lr · m̂ / (sqrt(v̂) + eps) - lr · wd · θ
//
// Moment buffers are keyed by parameter name, so the order in which
// parameter groups are passed does not matter.
class AdamW {
 public:
  struct Moments {
    Vector first;
    Vector second;
  };

  explicit AdamW(AdamWConfig cfg = {});

  const AdamWConfig& config() const noexcept { return cfg_; }
  std::size_t step_count() const noexcept { return step_; }
  const Moments* moments(const std::string& name) const;

  // One update of every parameter. `lr_scale` multiplies the learning rate
  // for this step only. Throws ShapeError when a name reappears with a
  // different size or a gradient buffer does not match its value.
  void step(std::span<const ParamView> params, double lr_scale = 1.0);

 private:
  AdamWConfig cfg_;
  std::size_t step_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace paid
