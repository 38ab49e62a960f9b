#pragma once

// Magnitude/direction view of a weight matrix whose columns are neurons,
// plus the cross-weight drift metrics used by `paid diagnose`.

#include "paid/numkit.hpp"

namespace paid {

inline constexpr double kMinColumnNorm = 1e-12;
inline constexpr double kEnergyMinDistance = 1e-9;

struct DecomposedWeight {
  Vector magnitude;  // one entry per column
  Matrix direction;  // same shape as the source weight, unit columns
};

// Throws DegenerateError when any column norm is below kMinColumnNorm.
DecomposedWeight decompose(const Matrix& w);
Matrix recompose(const DecomposedWeight& dw);

// Mean absolute difference of column norms.
double delta_magnitude(const Matrix& w1, const Matrix& w2);
// Mean of (1 - cos) between paired columns. Range [0, 2].
double delta_angle(const Matrix& w1, const Matrix& w2);
// Sum over ordered pairs i != j of 1 / ||d_i - d_j||. Columns must be unit
// within 1e-9; coincident columns throw DegenerateError.
double hyperspherical_energy(const Matrix& unit_columns);
// |HE(dir(w1)) - HE(dir(w2))|
double delta_structure(const Matrix& w1, const Matrix& w2);
// DᵀD
Matrix pairwise_gram(const Matrix& unit_columns);

struct GeometryDelta {
  double magnitude = 0.0;
  double angle = 0.0;
  double structure = 0.0;
};

GeometryDelta geometry_delta(const Matrix& w1, const Matrix& w2);

}  // namespace paid
