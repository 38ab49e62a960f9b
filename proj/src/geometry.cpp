#include "paid/geometry.hpp"

#include <cmath>
#include <string>

#include "paid/errors.hpp"

namespace paid {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

}  // namespace

DecomposedWeight decompose(const Matrix& w) {
  DecomposedWeight out{column_norms(w), w};
  for (std::size_t c = 0; c < w.cols(); ++c) {
    const double n = out.magnitude[c];
    if (!(n >= kMinColumnNorm)) {
      throw DegenerateError("column " + std::to_string(c) + " has norm " + std::to_string(n));
    }
  }
  for (std::size_t r = 0; r < w.rows(); ++r) {
    auto row = out.direction.row(r);
    for (std::size_t c = 0; c < w.cols(); ++c) row[c] /= out.magnitude[c];
  }
  return out;
}

Matrix recompose(const DecomposedWeight& dw) {
  if (dw.magnitude.size() != dw.direction.cols()) {
    throw ShapeError("recompose: magnitude length != direction columns");
  }
  Matrix out = dw.direction;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < out.cols(); ++c) row[c] *= dw.magnitude[c];
  }
  return out;
}

double delta_magnitude(const Matrix& w1, const Matrix& w2) {
  require_same_shape(w1, w2, "delta_magnitude");
  if (w1.cols() == 0) return 0.0;
  const Vector n1 = column_norms(w1);
  const Vector n2 = column_norms(w2);
  double s = 0.0;
  for (std::size_t c = 0; c < n1.size(); ++c) s += std::abs(n1[c] - n2[c]);
  return s / static_cast<double>(n1.size());
}

double delta_angle(const Matrix& w1, const Matrix& w2) {
  require_same_shape(w1, w2, "delta_angle");
  if (w1.cols() == 0) return 0.0;
  const Matrix d1 = decompose(w1).direction;
  const Matrix d2 = decompose(w2).direction;
  double s = 0.0;
  for (std::size_t c = 0; c < d1.cols(); ++c) {
    double cosine = 0.0;
    for (std::size_t r = 0; r < d1.rows(); ++r) cosine += d1(r, c) * d2(r, c);
    s += 1.0 - cosine;
  }
  return s / static_cast<double>(d1.cols());
}

double hyperspherical_energy(const Matrix& d) {
  const Vector norms = column_norms(d);
  for (std::size_t c = 0; c < norms.size(); ++c) {
    if (std::abs(norms[c] - 1.0) > 1e-9) {
      throw DegenerateError("hyperspherical_energy: column " + std::to_string(c) +
                            " is not unit (norm " + std::to_string(norms[c]) + ")");
    }
  }
  // Column-major copy keeps the pair loop contiguous.
  const Matrix cols = transpose(d);
  double energy = 0.0;
  for (std::size_t i = 0; i < cols.rows(); ++i) {
    auto ci = cols.row(i);
    for (std::size_t j = i + 1; j < cols.rows(); ++j) {
      auto cj = cols.row(j);
      double sq = 0.0;
      for (std::size_t k = 0; k < ci.size(); ++k) {
        const double diff = ci[k] - cj[k];
        sq += diff * diff;
      }
      const double dist = std::sqrt(sq);
      if (dist < kEnergyMinDistance) {
        throw DegenerateError("hyperspherical_energy: columns " + std::to_string(i) + " and " +
                              std::to_string(j) + " coincide");
      }
      // (i, j) and (j, i)
      energy += 2.0 / dist;
    }
  }
  return energy;
}

double delta_structure(const Matrix& w1, const Matrix& w2) {
  return std::abs(hyperspherical_energy(decompose(w1).direction) -
                  hyperspherical_energy(decompose(w2).direction));
}

Matrix pairwise_gram(const Matrix& d) { return matmul_tn(d, d); }

GeometryDelta geometry_delta(const Matrix& w1, const Matrix& w2) {
  return {delta_magnitude(w1, w2), delta_angle(w1, w2), delta_structure(w1, w2)};
}

}  // namespace paid
