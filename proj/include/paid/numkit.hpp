#pragma once

// Dense row-major matrices, seeded Gaussian generation and a central
// finite-difference gradient oracle. Everything here is plain f64.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace paid {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  // Throws ShapeError when data.size() != rows * cols.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  // Nested initializer, one inner list per row. Ragged input throws.
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  Vector column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> values);

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// aᵀ·b and a·bᵀ without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);

Vector column_norms(const Matrix& a);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
// max |a_ij - b_ij|; shapes must agree.
double max_abs_diff(const Matrix& a, const Matrix& b);
double max_abs_diff(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> values);

inline constexpr double kStdEpsilon = 1e-12;

struct MeanStd {
  Vector mean;
  Vector std;
};

// Per-column mean and population std, std = sqrt(var + kStdEpsilon).
// Two-pass. Empty batch throws ShapeError.
MeanStd batch_mean_std(const Matrix& features);

// SplitMix64-seeded xoshiro256** stream. The sequence depends only on the
// seed, so draws are identical on every platform. Normals come from the
// Box-Muller transform applied to 53-bit uniforms.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double gaussian();
  // Uniform integer in [0, n). n must be > 0.
  std::size_t below(std::size_t n);

  // Derive an independent stream, e.g. one per dataset split or domain.
  Rng fork(std::uint64_t stream) const;

  // UniformRandomBitGenerator so std::shuffle works.
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next_u64(); }

 private:
  std::uint64_t seed_;
  std::uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Matrix rng_gaussian(Rng& rng, std::size_t rows, std::size_t cols, double stddev = 1.0);

// Fisher-Yates permutation of 0..n-1, driven by rng.
std::vector<std::size_t> permutation(Rng& rng, std::size_t n);

using ScalarFn = std::function<double(std::span<const double>)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
// Throws NumericError on non-finite evaluations or h <= 0.
Vector finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h = 1e-5);

// Elementwise relative error |a-b| / max(|a|, |b|); entries where both
// magnitudes are below `abs_floor` are compared absolutely.
double max_relative_error(std::span<const double> analytic,
                          std::span<const double> numeric,
                          double abs_floor = 1e-8);

}  // namespace paid
