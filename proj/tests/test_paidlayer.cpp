#include <doctest.h>

#include <cmath>
#include <string>

#include "oracles.hpp"
#include "paid/errors.hpp"
#include "paid/geometry.hpp"
#include "paid/optimizer.hpp"
#include "paid/paidlayer.hpp"

using namespace paid;

namespace {

struct Fixture {
  Matrix w;
  Vector bias;
  Matrix x;
};

Fixture make_fixture(std::uint64_t seed, std::size_t in = 6, std::size_t out = 4, std::size_t batch = 5) {
  Rng rng(seed);
  Fixture f{rng_gaussian(rng, in, out), {}, rng_gaussian(rng, batch, in)};
  for (std::size_t j = 0; j < out; ++j) f.bias.push_back(rng.gaussian());
  return f;
}

Matrix dense_forward(const Matrix& x, const Matrix& w, const Vector& b) {
  Matrix y = oracle::naive_matmul(x, w);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b[j];
  return y;
}

Vector flat(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("mode names round-trip") {
  for (UpdateMode m : kAllModes) CHECK(parse_update_mode(to_string(m)) == m);
  CHECK(to_string(UpdateMode::Paid) == "paid");
  CHECK(to_string(UpdateMode::MagDirFree) == "magdir");
  CHECK_THROWS_AS(parse_update_mode("lora"), ConfigError);
}

TEST_CASE("every mode reproduces the pre-trained layer at construction") {
  const Fixture f = make_fixture(1);
  const Matrix ref = dense_forward(f.x, f.w, f.bias);
  for (UpdateMode m : kAllModes) {
    Rng rng(3);
    PaidLinear layer = PaidLinear::from_pretrained(f.w, f.bias, m, 12, rng);
    CAPTURE(to_string(m));
    CHECK(max_abs_diff(layer.effective_weight(), f.w) <= 1e-12);
    CHECK(max_abs_diff(layer.forward(f.x), ref) <= 1e-12);
  }
}

TEST_CASE("forward examples") {
  Rng rng(1);
  PaidLinear id = PaidLinear::from_pretrained(Matrix::identity(3), Vector(3, 0.0), UpdateMode::Paid, 4, rng);
  const Matrix x = rng_gaussian(rng, 4, 3);
  CHECK(max_abs_diff(id.forward(x), x) <= 1e-12);

  const Fixture f = make_fixture(2);
  PaidLinear layer = PaidLinear::from_pretrained(f.w, f.bias, UpdateMode::Paid, 4, rng);
  const Matrix y = layer.forward(Matrix(3, 6));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(y(i, j) == f.bias[j]);
  CHECK_THROWS_AS(layer.forward(Matrix(3, 5)), ShapeError);
}

TEST_CASE("effective weight scales with the magnitudes") {
  const Fixture f = make_fixture(3);
  Rng rng(1);
  PaidLinear layer = PaidLinear::from_pretrained(f.w, f.bias, UpdateMode::Paid, 4, rng);
  for (double& m : layer.magnitude()) m *= 2;
  CHECK(max_abs_diff(layer.effective_weight(), scale(f.w, 2)) <= 1e-12);
}

TEST_CASE("backward matches finite differences in every mode") {
  for (UpdateMode m : kAllModes) {
    CAPTURE(to_string(m));
    Fixture f = make_fixture(10, 7, 5, 4);
    Rng rng(11);
    PaidLinear layer = PaidLinear::from_pretrained(f.w, f.bias, m, 4, rng);
    // Move away from the identity so chain gradients are generic.
    if (uses_chain(m)) layer.chain() = random_chain(7, 4, rng);
    for (double& v : layer.magnitude()) v *= 1.3;
    const Matrix up = rng_gaussian(rng, 4, 5);
    auto objective = [&] { return dot(layer.forward(f.x).data(), up.data()); };

    layer.zero_grad();
    layer.forward(f.x);
    const Matrix dx = layer.backward(up);
    CHECK(oracle::rel_err(flat(dx.data()), oracle::numeric_grad(objective, f.x.data())) <= 1e-5);
    if (learns_magnitude(m))
      CHECK(oracle::rel_err(layer.grad_magnitude(), oracle::numeric_grad(objective, layer.magnitude())) <= 1e-5);
    else
      CHECK(layer.grad_magnitude().empty());
    if (learns_direction(m))
      CHECK(oracle::rel_err(flat(layer.grad_direction().data()),
                            oracle::numeric_grad(objective, layer.direction().data())) <= 1e-5);
    else
      CHECK(layer.grad_direction().empty());
    if (uses_chain(m))
      CHECK(oracle::rel_err(flat(layer.grad_chain().data()),
                            oracle::numeric_grad(objective, layer.chain().params().data())) <= 1e-5);
    else
      CHECK(layer.grad_chain().empty());
  }
}

TEST_CASE("magnitude gradient has the closed form <dY_j, x (O d_j)>") {
  const Fixture f = make_fixture(12);
  Rng rng(1);
  PaidLinear layer = PaidLinear::from_pretrained(f.w, f.bias, UpdateMode::MagnitudeOnly, 0, rng);
  const Matrix up = rng_gaussian(rng, 5, 4);
  layer.forward(f.x);
  layer.backward(up);
  const Matrix proj = oracle::naive_matmul(f.x, oracle::unit_columns(f.w));
  for (std::size_t j = 0; j < 4; ++j) {
    double expect = 0;
    for (std::size_t b = 0; b < 5; ++b) expect += up(b, j) * proj(b, j);
    CHECK(std::abs(layer.grad_magnitude()[j] - expect) <= 1e-12);
  }
}

TEST_CASE("zero upstream gives zero gradients") {
  const Fixture f = make_fixture(13);
  Rng rng(1);
  PaidLinear layer = PaidLinear::from_pretrained(f.w, f.bias, UpdateMode::Paid, 4, rng);
  layer.forward(f.x);
  const Matrix dx = layer.backward(Matrix(5, 4));
  for (double v : dx.data()) CHECK(v == 0);
  for (double v : layer.grad_magnitude()) CHECK(v == 0);
  for (double v : layer.grad_chain().data()) CHECK(v == 0);
}

TEST_CASE("backward before forward is a state error") {
  const Fixture f = make_fixture(14);
  Rng rng(1);
  PaidLinear layer = PaidLinear::from_pretrained(f.w, f.bias, UpdateMode::Paid, 4, rng);
  CHECK_THROWS_AS(layer.backward(Matrix(5, 4)), StateError);
  layer.forward(f.x);
  CHECK_THROWS_AS(layer.backward(Matrix(3, 4)), StateError);
}

TEST_CASE("parameter views stay valid across zero_grad and backward") {
  // The optimizer holds spans taken before the reverse pass.
  for (UpdateMode m : kAllModes) {
    CAPTURE(to_string(m));
    const Fixture f = make_fixture(15);
    Rng rng(2);
    PaidLinear layer = PaidLinear::from_pretrained(f.w, f.bias, m, 4, rng);
    const auto views = layer.parameters("l");
    layer.zero_grad();
    layer.forward(f.x);
    layer.backward(rng_gaussian(rng, 5, 4));
    for (const ParamView& p : views) {
      const double* expect = p.name.ends_with("magnitude") ? layer.grad_magnitude().data()
                             : p.name.ends_with("direction") ? layer.grad_direction().data().data()
                                                             : layer.grad_chain().data().data();
      CHECK(p.grad.data() == expect);
    }
  }
}

TEST_CASE("trainable counts are ordered by mode") {
  const std::size_t in = 6, out = 5, r = 2;
  const Fixture f = make_fixture(16, in, out);
  auto count = [&](UpdateMode m) {
    Rng rng(1);
    return PaidLinear::from_pretrained(f.w, f.bias, m, r, rng).trainable_count();
  };
  CHECK(count(UpdateMode::Frozen) == 0);
  CHECK(count(UpdateMode::MagnitudeOnly) == out);
  CHECK(count(UpdateMode::Paid) == out + r * in);
  CHECK(count(UpdateMode::MagDirFree) == out + in * out);
  CHECK(count(UpdateMode::DirectionOrthogonal) == r * in);
  CHECK(count(UpdateMode::DirectionFree) == in * out);
  CHECK(count(UpdateMode::Frozen) < count(UpdateMode::MagnitudeOnly));
  CHECK(count(UpdateMode::MagnitudeOnly) < count(UpdateMode::Paid));
  CHECK(count(UpdateMode::Paid) < count(UpdateMode::MagDirFree));
}

namespace {

// Runs `steps` AdamW steps on a generic quadratic loss of the layer output.
PaidLinear train(UpdateMode m, std::size_t steps, std::uint64_t seed) {
  const Fixture f = make_fixture(seed, 8, 6, 10);
  Rng rng(seed + 1);
  PaidLinear layer = PaidLinear::from_pretrained(f.w, f.bias, m, 6, rng);
  const Matrix target = rng_gaussian(rng, 10, 6);
  AdamW opt({0.05});
  for (std::size_t s = 0; s < steps; ++s) {
    const auto params = layer.parameters("l");
    layer.zero_grad();
    const Matrix y = layer.forward(f.x);
    layer.backward(sub(y, target));
    opt.step(params);
    layer.project_magnitude();
  }
  return layer;
}

}  // namespace

TEST_CASE("chain modes preserve the pairwise structure through training") {
  for (UpdateMode m : {UpdateMode::Paid, UpdateMode::DirectionOrthogonal}) {
    CAPTURE(to_string(m));
    const Fixture f = make_fixture(20, 8, 6, 10);
    const PaidLinear layer = train(m, 50, 20);
    const Matrix w = layer.effective_weight();
    CHECK(delta_structure(w, f.w) <= 1e-9);
    CHECK(oracle::max_gram_gap(w, f.w) <= 1e-9);
    CHECK(delta_angle(w, f.w) > 1e-4);
    const Vector norms = column_norms(w);
    for (std::size_t j = 0; j < norms.size(); ++j) CHECK(std::abs(norms[j] - layer.magnitude()[j]) <= 1e-10);
  }
}

TEST_CASE("free-direction modes change the structure") {
  for (UpdateMode m : {UpdateMode::DirectionFree, UpdateMode::MagDirFree}) {
    CAPTURE(to_string(m));
    const Fixture f = make_fixture(20, 8, 6, 10);
    CHECK(delta_structure(train(m, 1, 20).effective_weight(), f.w) > 1e-6);
  }
}

TEST_CASE("magnitude-only and frozen leave directions bit-identical") {
  const Fixture f = make_fixture(20, 8, 6, 10);
  const Matrix dir = decompose(f.w).direction;
  CHECK(train(UpdateMode::MagnitudeOnly, 20, 20).direction() == dir);
  const PaidLinear frozen = train(UpdateMode::Frozen, 5, 20);
  CHECK(frozen.effective_weight() == f.w);
}

TEST_CASE("magnitudes never cross zero") {
  Rng rng(1);
  PaidLinear layer = PaidLinear::from_pretrained(Matrix::identity(2), {0, 0}, UpdateMode::Paid, 2, rng);
  layer.magnitude()[0] = -0.5;
  layer.project_magnitude();
  CHECK(layer.magnitude()[0] == kMinMagnitude);
  CHECK(layer.magnitude()[1] == 1.0);
}
