#include "paid/householder.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "paid/errors.hpp"

namespace paid {

namespace {

// x <- (I - 2uuᵀ) x for every column of x.
void reflect_columns(std::span<const double> u, Matrix& x) {
  const std::size_t n = x.cols();
  Vector proj(n, 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double ur = u[r];
    if (ur == 0.0) continue;
    auto row = x.row(r);
    for (std::size_t c = 0; c < n; ++c) proj[c] += ur * row[c];
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double ur2 = 2.0 * u[r];
    if (ur2 == 0.0) continue;
    auto row = x.row(r);
    for (std::size_t c = 0; c < n; ++c) row[c] -= ur2 * proj[c];
  }
}

void require_dim(const HouseholderChain& chain, const Matrix& x, const char* op) {
  if (x.rows() != chain.dim()) {
    throw ShapeError(std::string(op) + ": chain dim " + std::to_string(chain.dim()) +
                     " vs input rows " + std::to_string(x.rows()));
  }
}

}  // namespace

HouseholderChain::HouseholderChain(std::size_t dim, Matrix params)
    : dim_(dim), params_(std::move(params)) {
  if (params_.cols() != dim_ && !(params_.rows() == 0)) {
    throw ShapeError("HouseholderChain: reflector length " + std::to_string(params_.cols()) +
                     " != dim " + std::to_string(dim_));
  }
  if (params_.rows() == 0) params_ = Matrix(0, dim_);
}

Vector HouseholderChain::unit(std::size_t i) const {
  auto v = params_.row(i);
  const double n = norm2(v);
  if (!(n >= kMinReflectorNorm)) {
    throw DegenerateError("reflector " + std::to_string(i) + " has norm " + std::to_string(n));
  }
  Vector u(v.begin(), v.end());
  for (double& e : u) e /= n;
  return u;
}

Matrix reflection_matrix(std::span<const double> v) {
  const double n = norm2(v);
  if (!(n >= kMinReflectorNorm)) {
    throw DegenerateError("reflection_matrix: vector norm " + std::to_string(n));
  }
  const std::size_t dim = v.size();
  Matrix h = Matrix::identity(dim);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) h(i, j) -= 2.0 * (v[i] / n) * (v[j] / n);
  return h;
}

Matrix chain_apply(const HouseholderChain& chain, const Matrix& x) {
  require_dim(chain, x, "chain_apply");
  Matrix out = x;
  for (std::size_t i = chain.size(); i-- > 0;) reflect_columns(chain.unit(i), out);
  return out;
}

Matrix chain_materialize(const HouseholderChain& chain) {
  return chain_apply(chain, Matrix::identity(chain.dim()));
}

ChainGrad chain_grad(const HouseholderChain& chain, const Matrix& x, const Matrix& upstream) {
  require_dim(chain, x, "chain_grad");
  if (!upstream.same_shape(x)) throw ShapeError("chain_grad: upstream shape != x shape");
  const std::size_t r = chain.size();
  const std::size_t n = x.cols();

  std::vector<Vector> units;
  units.reserve(r);
  for (std::size_t i = 0; i < r; ++i) units.push_back(chain.unit(i));

  // inputs[i] is what reflector i sees on the forward pass.
  std::vector<Matrix> inputs(r);
  Matrix z = x;
  for (std::size_t i = r; i-- > 0;) {
    inputs[i] = z;
    reflect_columns(units[i], z);
  }

  ChainGrad out{Matrix(r, chain.dim()), upstream};
  Matrix& g = out.x;
  for (std::size_t i = 0; i < r; ++i) {
    const Vector& u = units[i];
    const Matrix& zin = inputs[i];
    // dL/du = -2 * sum_c [ g_c (u·z_c) + z_c (u·g_c) ]
    Vector uz(n, 0.0), ug(n, 0.0);
    for (std::size_t row = 0; row < chain.dim(); ++row) {
      auto zr = zin.row(row);
      auto gr = g.row(row);
      for (std::size_t c = 0; c < n; ++c) {
        uz[c] += u[row] * zr[c];
        ug[c] += u[row] * gr[c];
      }
    }
    Vector du(chain.dim(), 0.0);
    for (std::size_t row = 0; row < chain.dim(); ++row) {
      auto zr = zin.row(row);
      auto gr = g.row(row);
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) s += gr[c] * uz[c] + zr[c] * ug[c];
      du[row] = -2.0 * s;
    }
    // Through u = v / ||v||: dv = (du - u (u·du)) / ||v||
    const double vnorm = norm2(chain.params().row(i));
    const double udu = dot(u, du);
    auto dv = out.params.row(i);
    for (std::size_t k = 0; k < chain.dim(); ++k) dv[k] = (du[k] - u[k] * udu) / vnorm;
    // H is symmetric, so the upstream for the next reflector is H_i g.
    reflect_columns(u, g);
  }
  return out;
}

HouseholderChain init_identity(std::size_t dim, std::size_t r, Rng& rng,
                               bool allow_non_identity) {
  if (r % 2 != 0 && !allow_non_identity) {
    throw ConfigError("init_identity: odd reflector count " + std::to_string(r) +
                      " cannot start at the identity");
  }
  if (dim == 0 && r > 0) throw ConfigError("init_identity: dim must be positive");
  Matrix params(r, dim);
  for (std::size_t i = 0; i + 1 < r; i += 2) {
    Vector v(dim);
    double n = 0.0;
    while (n < 1e-3) {
      for (double& e : v) e = rng.gaussian();
      n = norm2(v);
    }
    for (std::size_t k = 0; k < dim; ++k) {
      params(i, k) = v[k] / n;
      params(i + 1, k) = v[k] / n;
    }
  }
  if (r % 2 != 0) {
    Vector v(dim);
    double n = 0.0;
    while (n < 1e-3) {
      for (double& e : v) e = rng.gaussian();
      n = norm2(v);
    }
    for (std::size_t k = 0; k < dim; ++k) params(r - 1, k) = v[k] / n;
  }
  return HouseholderChain(dim, std::move(params));
}

HouseholderChain random_chain(std::size_t dim, std::size_t r, Rng& rng) {
  Matrix params(r, dim);
  for (std::size_t i = 0; i < r; ++i) {
    double n = 0.0;
    while (n < 1e-3) {
      for (double& e : params.row(i)) e = rng.gaussian();
      n = norm2(params.row(i));
    }
  }
  return HouseholderChain(dim, std::move(params));
}

double orthogonality_error(const Matrix& o) {
  if (o.rows() != o.cols()) throw ShapeError("orthogonality_error: matrix is not square");
  return max_abs_diff(matmul_tn(o, o), Matrix::identity(o.rows()));
}

HouseholderChain decompose_orthogonal(const Matrix& o) {
  const double err = orthogonality_error(o);
  if (!(err <= 1e-8)) {
    throw NumericError("decompose_orthogonal: input is not orthogonal (max |OᵀO - I| = " +
                       std::to_string(err) + ")");
  }
  const std::size_t n = o.rows();
  Matrix a = o;
  std::vector<Vector> reflectors;

  // Reflector k maps a[k:, k] onto +||a[k:, k]|| e_k, which keeps the
  // triangular factor's diagonal at +1 for every column but the last.
  for (std::size_t k = 0; k + 1 < n; ++k) {
    double tail_sq = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) tail_sq += a(i, k) * a(i, k);
    const double pivot = a(k, k);
    if (std::sqrt(tail_sq) <= 1e-14 && pivot > 0.0) continue;
    const double mu = std::sqrt(pivot * pivot + tail_sq);
    Vector v(n, 0.0);
    // v_k = pivot - mu, computed without cancellation when pivot > 0.
    v[k] = pivot <= 0.0 ? pivot - mu : -tail_sq / (pivot + mu);
    for (std::size_t i = k + 1; i < n; ++i) v[i] = a(i, k);
    const double vn = norm2(v);
    for (double& e : v) e /= vn;
    reflect_columns(v, a);
    reflectors.push_back(std::move(v));
  }
  // a is now diag(1, ..., 1, ±1) up to rounding.
  if (n > 0 && a(n - 1, n - 1) < 0.0) {
    Vector v(n, 0.0);
    v[n - 1] = 1.0;
    reflectors.push_back(std::move(v));
  }

  Matrix params(reflectors.size(), n);
  for (std::size_t i = 0; i < reflectors.size(); ++i)
    for (std::size_t k = 0; k < n; ++k) params(i, k) = reflectors[i][k];
  return HouseholderChain(n, std::move(params));
}

}  // namespace paid
