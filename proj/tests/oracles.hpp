#pragma once

// Reference implementations used as test oracles. They share nothing with
// the library beyond the Matrix container and are written for clarity, not
// speed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "paid/numkit.hpp"

namespace oracle {

using paid::Matrix;
using paid::Vector;

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
      c(i, j) = static_cast<double>(s);
    }
  return c;
}

inline Matrix naive_transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline double column_norm(const Matrix& a, std::size_t j) {
  double s = 0;
  for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

inline double column_dot(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  double s = 0;
  for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
  return s;
}

inline Matrix unit_columns(const Matrix& a) {
  Matrix u = a;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    const double n = column_norm(a, j);
    for (std::size_t i = 0; i < a.rows(); ++i) u(i, j) /= n;
  }
  return u;
}

// Determinant by LU with partial pivoting.
inline double determinant(Matrix a) {
  const std::size_t n = a.rows();
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(p, k))) p = i;
    if (a(p, k) == 0.0) return 0.0;
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(p, j), a(k, j));
      det = -det;
    }
    det *= a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return det;
}

// Q factor of a square matrix by modified Gram-Schmidt, with column signs
// fixed so that R has a positive diagonal. Gives a Haar-ish random
// orthogonal matrix when fed a Gaussian one.
inline Matrix gram_schmidt_q(const Matrix& a) {
  Matrix q = a;
  const std::size_t n = a.cols();
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      const double r = column_dot(q, k, q, j);
      for (std::size_t i = 0; i < q.rows(); ++i) q(i, j) -= r * q(i, k);
    }
    const double nrm = column_norm(q, j);
    for (std::size_t i = 0; i < q.rows(); ++i) q(i, j) /= nrm;
  }
  return q;
}

inline Matrix random_orthogonal(paid::Rng& rng, std::size_t n) {
  return gram_schmidt_q(paid::rng_gaussian(rng, n, n));
}

// O = H_1 ... H_r built from explicit dense reflections, multiplied left to
// right.
inline Matrix dense_chain(const Matrix& params) {
  const std::size_t dim = params.cols();
  Matrix o = Matrix::identity(dim);
  for (std::size_t i = 0; i < params.rows(); ++i) {
    double n2 = 0;
    for (std::size_t k = 0; k < dim; ++k) n2 += params(i, k) * params(i, k);
    Matrix h = Matrix::identity(dim);
    for (std::size_t a = 0; a < dim; ++a)
      for (std::size_t b = 0; b < dim; ++b) h(a, b) -= 2.0 * params(i, a) * params(i, b) / n2;
    o = naive_matmul(o, h);
  }
  return o;
}

// Sum over ordered pairs i != j of 1 / ||d_i - d_j|| on unit columns.
inline double energy(const Matrix& d) {
  double e = 0;
  for (std::size_t i = 0; i < d.cols(); ++i)
    for (std::size_t j = 0; j < d.cols(); ++j) {
      if (i == j) continue;
      double s = 0;
      for (std::size_t k = 0; k < d.rows(); ++k) s += (d(k, i) - d(k, j)) * (d(k, i) - d(k, j));
      e += 1.0 / std::sqrt(s);
    }
  return e;
}

inline double max_gram_gap(const Matrix& a, const Matrix& b) {
  const Matrix ua = unit_columns(a), ub = unit_columns(b);
  double worst = 0;
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      worst = std::max(worst, std::abs(column_dot(ua, i, ua, j) - column_dot(ub, i, ub, j)));
  return worst;
}

// Population mean and std with eps inside the square root.
inline std::pair<Vector, Vector> mean_std(const Matrix& z, double eps = 1e-12) {
  Vector mu(z.cols(), 0.0), sd(z.cols(), 0.0);
  for (std::size_t j = 0; j < z.cols(); ++j) {
    for (std::size_t i = 0; i < z.rows(); ++i) mu[j] += z(i, j);
    mu[j] /= static_cast<double>(z.rows());
    double v = 0;
    for (std::size_t i = 0; i < z.rows(); ++i) v += (z(i, j) - mu[j]) * (z(i, j) - mu[j]);
    sd[j] = std::sqrt(v / static_cast<double>(z.rows()) + eps);
  }
  return {mu, sd};
}

inline double l2_gap(const Vector& a, const Vector& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// ||mu_s - mu_t|| + lambda ||sigma_s - sigma_t|| straight from the definition.
inline double alignment(const Vector& mu_s, const Vector& sd_s, const Matrix& z, double lambda) {
  const auto [mu, sd] = mean_std(z);
  return l2_gap(mu_s, mu) + lambda * l2_gap(sd_s, sd);
}

// Central differences of f over every entry of `x`, restoring it after.
template <class F>
Vector numeric_grad(F&& f, std::span<double> x, double h = 1e-6) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f();
    x[i] = keep - h;
    const double fm = f();
    x[i] = keep;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

inline double rel_err(const Vector& a, const Vector& b, double floor = 1e-7) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max(std::abs(a[i]), std::abs(b[i]));
    const double e = scale < floor ? std::abs(a[i] - b[i]) : std::abs(a[i] - b[i]) / scale;
    worst = std::max(worst, e);
  }
  return worst;
}

}  // namespace oracle
