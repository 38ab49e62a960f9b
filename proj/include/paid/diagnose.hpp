#pragma once

// Weight-geometry comparison of two checkpoints: ΔM, ΔA and ΔS for every
// block linear weight ("block<i>.<slot>.weight").

#include <span>
#include <string>
#include <vector>

#include "paid/checkpoint.hpp"
#include "paid/experiment.hpp"

namespace paid {

struct TensorGeometry {
  std::string name;
  double delta_m = 0.0;
  double delta_a = 0.0;
  double delta_s = 0.0;
};

struct DiagnoseResult {
  std::vector<TensorGeometry> layers;
  double mean_delta_m = 0.0;
  double mean_delta_a = 0.0;
  double mean_delta_s = 0.0;
  double max_delta_s = 0.0;
};

// Throws ConfigError if `b` lacks a compared tensor or neither side has
// any, ShapeError naming the tensor on a shape mismatch.
DiagnoseResult diagnose_tensors(std::span<const Tensor> a, std::span<const Tensor> b);
Json to_json(const DiagnoseResult& result);

}  // namespace paid
