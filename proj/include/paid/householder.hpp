#pragma once

// Orthogonal maps parameterized as products of Householder reflections.
//
//   O = H_1 H_2 ... H_r,   H_i = I - 2 u_i u_iᵀ,   u_i = v_i / ||v_i||
//
// The learnable parameters are the unnormalized v_i (rows of `params`).
// They are renormalized on every use, so O is orthogonal for any parameter
// values as long as no v_i collapses below kMinReflectorNorm.

#include <cstddef>

#include "paid/numkit.hpp"

namespace paid {

inline constexpr double kMinReflectorNorm = 1e-8;

class HouseholderChain {
 public:
  HouseholderChain() = default;
  // Empty chain (r = 0) acting on R^dim.
  explicit HouseholderChain(std::size_t dim) : dim_(dim), params_(0, dim) {}
  // One reflector per row of `params`.
  HouseholderChain(std::size_t dim, Matrix params);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return params_.rows(); }

  const Matrix& params() const noexcept { return params_; }
  Matrix& params() noexcept { return params_; }

  // Unit vector of reflector i; throws DegenerateError if ||v_i|| is too small.
  Vector unit(std::size_t i) const;

  friend bool operator==(const HouseholderChain&, const HouseholderChain&) = default;

 private:
  std::size_t dim_ = 0;
  Matrix params_;
};

// H = I - 2uuᵀ with u = v / ||v||.
Matrix reflection_matrix(std::span<const double> v);

// O·x for x of shape dim x n, applying H_r first and H_1 last as rank-1
// updates. Cost O(r·dim·n).
Matrix chain_apply(const HouseholderChain& chain, const Matrix& x);

Matrix chain_materialize(const HouseholderChain& chain);

struct ChainGrad {
  Matrix params;  // r x dim, gradient wrt each unnormalized v_i
  Matrix x;       // dim x n, equals Oᵀ·upstream
};

// Gradients of <upstream, O·x> with respect to the parameters and x.
ChainGrad chain_grad(const HouseholderChain& chain, const Matrix& x, const Matrix& upstream);

// Chain whose product is exactly the identity: consecutive reflector pairs
// share one random direction. Odd r throws ConfigError unless
// `allow_non_identity` is set, in which case the final reflector is left
// unpaired and O is a single reflection.
HouseholderChain init_identity(std::size_t dim, std::size_t r, Rng& rng,
                               bool allow_non_identity = false);

// Random chain with independent Gaussian reflectors.
HouseholderChain random_chain(std::size_t dim, std::size_t r, Rng& rng);

// Householder triangularization of an orthogonal matrix. Returns a chain of
// at most dim reflectors whose product reproduces `o`. Reflectors that would
// act as the identity are dropped. Throws NumericError when `o` is not
// orthogonal within 1e-8.
HouseholderChain decompose_orthogonal(const Matrix& o);

// max |OᵀO - I|
double orthogonality_error(const Matrix& o);

}  // namespace paid
