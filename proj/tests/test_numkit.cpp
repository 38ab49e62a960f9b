#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "paid/errors.hpp"
#include "paid/numkit.hpp"

using namespace paid;

TEST_CASE("matmul examples") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(Matrix::identity(2), a) == a);
  CHECK(matmul(a, Matrix::from_rows({{0}, {1}})) == Matrix::from_rows({{2}, {4}}));
  CHECK(matmul(Matrix(2, 2), a) == Matrix(2, 2));
  CHECK_THROWS_AS(matmul(a, Matrix(3, 1)), ShapeError);
}

TEST_CASE("matmul agrees with the naive oracle, including transposed variants") {
  Rng rng(5);
  const Matrix a = rng_gaussian(rng, 7, 5), b = rng_gaussian(rng, 5, 3), c = rng_gaussian(rng, 7, 3);
  CHECK(max_abs_diff(matmul(a, b), oracle::naive_matmul(a, b)) < 1e-13);
  CHECK(max_abs_diff(matmul_tn(a, c), oracle::naive_matmul(oracle::naive_transpose(a), c)) < 1e-13);
  CHECK(max_abs_diff(matmul_nt(c, b), oracle::naive_matmul(c, oracle::naive_transpose(b))) < 1e-13);
}

TEST_CASE("matmul is associative and transposes reverse products") {
  Rng rng(9);
  for (int t = 0; t < 10; ++t) {
    const Matrix a = rng_gaussian(rng, 6, 4), b = rng_gaussian(rng, 4, 5), c = rng_gaussian(rng, 5, 3);
    const Matrix left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
    double scale = 0;
    for (double v : left.data()) scale = std::max(scale, std::abs(v));
    CHECK(max_abs_diff(left, right) <= 1e-9 * scale);
    CHECK(max_abs_diff(transpose(matmul(a, b)), matmul(transpose(b), transpose(a))) <= 1e-12);
  }
}

TEST_CASE("column_norms") {
  CHECK(column_norms(Matrix::identity(2)) == Vector{1, 1});
  CHECK(column_norms(Matrix::from_rows({{3, 0}, {0, 4}})) == Vector{3, 4});
  CHECK(column_norms(Matrix(2, 2)) == Vector{0, 0});
}

TEST_CASE("batch_mean_std") {
  SUBCASE("hand example") {
    const MeanStd ms = batch_mean_std(Matrix::from_rows({{1, 2}, {3, 4}}));
    CHECK(ms.mean[0] == doctest::Approx(2).epsilon(1e-15));
    CHECK(ms.mean[1] == doctest::Approx(3).epsilon(1e-15));
    CHECK(std::abs(ms.std[0] - 1) < 1e-12);
    CHECK(std::abs(ms.std[1] - 1) < 1e-12);
  }
  SUBCASE("single row and constant batches have std near zero") {
    const MeanStd one = batch_mean_std(Matrix::from_rows({{5}}));
    CHECK(one.mean[0] == 5);
    CHECK(one.std[0] <= std::sqrt(kStdEpsilon) + 1e-18);
    const MeanStd flat = batch_mean_std(Matrix(6, 3, 2.5));
    for (double s : flat.std) CHECK(s <= std::sqrt(kStdEpsilon) + 1e-15);
  }
  SUBCASE("empty batch throws") { CHECK_THROWS_AS(batch_mean_std(Matrix(0, 3)), ShapeError); }
  SUBCASE("shifting by a constant moves the mean only") {
    Rng rng(3);
    const Matrix z = rng_gaussian(rng, 40, 4);
    Matrix shifted = z;
    for (double& v : shifted.data()) v += 7.25;
    const MeanStd a = batch_mean_std(z), b = batch_mean_std(shifted);
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(std::abs(b.mean[j] - a.mean[j] - 7.25) < 1e-12);
      CHECK(std::abs(b.std[j] - a.std[j]) < 1e-12);
    }
  }
  SUBCASE("matches the population-std oracle") {
    Rng rng(4);
    const Matrix z = rng_gaussian(rng, 33, 5, 3.0);
    const auto [mu, sd] = oracle::mean_std(z);
    const MeanStd ms = batch_mean_std(z);
    CHECK(max_abs_diff(ms.mean, mu) < 1e-13);
    CHECK(max_abs_diff(ms.std, sd) < 1e-13);
  }
}

TEST_CASE("rng is reproducible and roughly standard normal") {
  Rng a(42), b(42), c(43);
  const Matrix x = rng_gaussian(a, 100, 100), y = rng_gaussian(b, 100, 100);
  CHECK(x == y);
  CHECK(!(rng_gaussian(c, 100, 100) == x));
  double mean = 0;
  for (double v : x.data()) mean += v;
  mean /= 1e4;
  double var = 0;
  for (double v : x.data()) var += (v - mean) * (v - mean);
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(std::sqrt(var / 1e4) - 1) < 0.05);
}

TEST_CASE("rng draw sequence is pinned") {
  // Guards against silent changes to the generator, which would shift every
  // pinned-seed result in the suite.
  Rng a(1), b(1);
  std::vector<std::uint64_t> first;
  for (int i = 0; i < 4; ++i) first.push_back(a.next_u64());
  for (int i = 0; i < 4; ++i) CHECK(b.next_u64() == first[static_cast<std::size_t>(i)]);
  Rng u(7);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK((v >= 0.0 && v < 1.0));
  }
  Rng f1(7), f2(7);
  CHECK(f1.fork(3).next_u64() == f2.fork(3).next_u64());
  CHECK(f1.fork(3).next_u64() != f1.fork(4).next_u64());
}

TEST_CASE("permutation covers every index once") {
  Rng rng(11);
  auto p = permutation(rng, 50);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(p[i] == i);
}

TEST_CASE("finite_diff_grad examples") {
  const double x0[] = {3.0};
  const Vector g = finite_diff_grad([](std::span<const double> x) { return x[0] * x[0]; }, x0);
  CHECK(std::abs(g[0] - 6) <= 1e-6);

  const double xs[] = {1.0, -2.0, 0.5};
  const Vector zero = finite_diff_grad([](std::span<const double>) { return 4.0; }, xs);
  for (double v : zero) CHECK(v == 0.0);

  const Vector c{0.3, -1.5, 2.0};
  const Vector lin = finite_diff_grad([&](std::span<const double> x) { return dot(c, x); }, xs);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(lin[i] - c[i]) <= 1e-8);

  CHECK_THROWS_AS(finite_diff_grad([](std::span<const double>) { return NAN; }, xs), NumericError);
  CHECK_THROWS_AS(finite_diff_grad([](std::span<const double>) { return 1.0; }, xs, 0.0), NumericError);
}

TEST_CASE("max_relative_error compares tiny entries absolutely") {
  const Vector a{1.0, 1e-12}, b{1.0 + 1e-6, 3e-12};
  CHECK(max_relative_error(a, b) == doctest::Approx(1e-6).epsilon(1e-3));
}

TEST_CASE("matrix construction checks sizes") {
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS(Matrix::from_rows({{1, 2}, {3}}));
  Matrix m = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(m.column(1) == Vector{2, 4});
  const double col[] = {9, 8};
  m.set_column(0, col);
  CHECK(m == Matrix::from_rows({{9, 2}, {8, 4}}));
  CHECK(all_finite(m.data()));
  m(0, 0) = INFINITY;
  CHECK(!all_finite(m.data()));
}
