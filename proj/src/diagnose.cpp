#include "paid/diagnose.hpp"

#include <algorithm>
#include <map>

#include "paid/errors.hpp"
#include "paid/geometry.hpp"

namespace paid {

namespace {

bool is_block_weight(const Tensor& t) {
  constexpr std::string_view suffix = ".weight";
  return t.shape.size() == 2 && t.name.starts_with("block") && t.name.size() > suffix.size() &&
         t.name.ends_with(suffix);
}

Matrix as_matrix(const Tensor& t) {
  Matrix m(t.shape[0], t.shape[1]);
  std::copy(t.values.begin(), t.values.end(), m.data().begin());
  return m;
}

}  // namespace

DiagnoseResult diagnose_tensors(std::span<const Tensor> a, std::span<const Tensor> b) {
  std::map<std::string, const Tensor*> by_name;
  for (const Tensor& t : b) by_name[t.name] = &t;
  DiagnoseResult out;
  for (const Tensor& ta : a) {
    if (!is_block_weight(ta)) continue;
    const auto it = by_name.find(ta.name);
    if (it == by_name.end()) throw ConfigError("diagnose: tensor " + ta.name + " missing from second checkpoint");
    const Tensor& tb = *it->second;
    if (tb.shape != ta.shape) throw ShapeError("diagnose: shape mismatch for tensor " + ta.name);
    const GeometryDelta d = geometry_delta(as_matrix(ta), as_matrix(tb));
    out.layers.push_back({ta.name, d.magnitude, d.angle, d.structure});
  }
  if (out.layers.empty()) throw ConfigError("diagnose: no block linear weights to compare");
  for (const TensorGeometry& g : out.layers) {
    out.mean_delta_m += g.delta_m;
    out.mean_delta_a += g.delta_a;
    out.mean_delta_s += g.delta_s;
    out.max_delta_s = std::max(out.max_delta_s, g.delta_s);
  }
  const double n = static_cast<double>(out.layers.size());
  out.mean_delta_m /= n;
  out.mean_delta_a /= n;
  out.mean_delta_s /= n;
  return out;
}

Json to_json(const DiagnoseResult& result) {
  Json layers = Json::array();
  for (const TensorGeometry& g : result.layers)
    layers.push_back({{"tensor", g.name}, {"delta_m", g.delta_m}, {"delta_a", g.delta_a}, {"delta_s", g.delta_s}});
  return {{"layers", layers},
          {"mean", {{"delta_m", result.mean_delta_m}, {"delta_a", result.mean_delta_a}, {"delta_s", result.mean_delta_s}}},
          {"max_delta_s", result.max_delta_s}};
}

}  // namespace paid
