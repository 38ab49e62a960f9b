#include "paid/paidlayer.hpp"

#include <algorithm>
#include <string>

#include "paid/errors.hpp"
#include "paid/geometry.hpp"

namespace paid {

namespace {

// Gradient buffers are handed out as spans by parameters(), so they are
// filled in place rather than reallocated.
void overwrite(Matrix& dst, const Matrix& src) {
  if (!dst.same_shape(src)) {
    dst = src;
    return;
  }
  std::copy(src.data().begin(), src.data().end(), dst.data().begin());
}

}  // namespace

bool uses_chain(UpdateMode mode) noexcept {
  return mode == UpdateMode::DirectionOrthogonal || mode == UpdateMode::Paid;
}

bool learns_magnitude(UpdateMode mode) noexcept {
  return mode == UpdateMode::MagnitudeOnly || mode == UpdateMode::MagDirFree ||
         mode == UpdateMode::Paid;
}

bool learns_direction(UpdateMode mode) noexcept {
  return mode == UpdateMode::DirectionFree || mode == UpdateMode::MagDirFree;
}

std::string_view to_string(UpdateMode mode) noexcept {
  switch (mode) {
    case UpdateMode::Frozen: return "frozen";
    case UpdateMode::MagnitudeOnly: return "magnitude";
    case UpdateMode::DirectionFree: return "direction";
    case UpdateMode::DirectionOrthogonal: return "direction-orth";
    case UpdateMode::MagDirFree: return "magdir";
    case UpdateMode::Paid: return "paid";
  }
  return "unknown";
}

UpdateMode parse_update_mode(std::string_view name) {
  for (UpdateMode m : kAllModes) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown update mode '" + std::string(name) +
                    "' (expected frozen|magnitude|direction|direction-orth|magdir|paid)");
}

PaidLinear PaidLinear::from_pretrained(const Matrix& weight, const Vector& bias, UpdateMode mode,
                                       std::size_t r, Rng& rng, bool allow_non_identity) {
  if (bias.size() != weight.cols()) {
    throw ShapeError("PaidLinear: bias length " + std::to_string(bias.size()) +
                     " != out_dim " + std::to_string(weight.cols()));
  }
  DecomposedWeight dw = decompose(weight);
  PaidLinear layer;
  layer.mode_ = mode;
  layer.original_ = weight;
  layer.magnitude_ = std::move(dw.magnitude);
  layer.direction_ = std::move(dw.direction);
  layer.bias_ = bias;
  layer.chain_ = uses_chain(mode) ? init_identity(weight.rows(), r, rng, allow_non_identity)
                                  : HouseholderChain(weight.rows());
  return layer;
}

Matrix PaidLinear::effective_weight() const {
  if (mode_ == UpdateMode::Frozen) return original_;
  Matrix w = uses_chain(mode_) ? chain_apply(chain_, direction_) : direction_;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    auto row = w.row(r);
    for (std::size_t c = 0; c < w.cols(); ++c) row[c] *= magnitude_[c];
  }
  return w;
}

Matrix PaidLinear::forward(const Matrix& x) {
  if (x.cols() != in_dim()) {
    throw ShapeError("PaidLinear::forward: input width " + std::to_string(x.cols()) +
                     " != in_dim " + std::to_string(in_dim()));
  }
  Matrix w;
  if (mode_ == UpdateMode::Frozen) {
    w = original_;
  } else {
    cached_rotated_ = uses_chain(mode_) ? chain_apply(chain_, direction_) : direction_;
    w = cached_rotated_;
    for (std::size_t r = 0; r < w.rows(); ++r) {
      auto row = w.row(r);
      for (std::size_t c = 0; c < w.cols(); ++c) row[c] *= magnitude_[c];
    }
  }
  Matrix y = matmul(x, w);
  for (std::size_t b = 0; b < y.rows(); ++b) {
    auto row = y.row(b);
    for (std::size_t c = 0; c < y.cols(); ++c) row[c] += bias_[c];
  }
  cached_x_ = x;
  return y;
}

Matrix PaidLinear::backward(const Matrix& dy) {
  if (!cached_x_) throw StateError("PaidLinear::backward called before forward");
  const Matrix& x = *cached_x_;
  if (dy.rows() != x.rows() || dy.cols() != out_dim()) {
    throw StateError("PaidLinear::backward: upstream shape does not match cached forward");
  }
  const Matrix w = effective_weight();
  Matrix dx = matmul_nt(dy, w);
  if (mode_ == UpdateMode::Frozen) return dx;

  const Matrix dw = matmul_tn(x, dy);  // in_dim x out_dim

  if (learns_magnitude(mode_)) {
    grad_magnitude_.assign(out_dim(), 0.0);
    for (std::size_t r = 0; r < dw.rows(); ++r) {
      for (std::size_t c = 0; c < dw.cols(); ++c)
        grad_magnitude_[c] += dw(r, c) * cached_rotated_(r, c);
    }
  }
  if (uses_chain(mode_) || learns_direction(mode_)) {
    // dL/d(rotated direction), scaled column-wise by the magnitudes.
    Matrix dd = dw;
    for (std::size_t r = 0; r < dd.rows(); ++r) {
      auto row = dd.row(r);
      for (std::size_t c = 0; c < dd.cols(); ++c) row[c] *= magnitude_[c];
    }
    if (uses_chain(mode_)) {
      overwrite(grad_chain_, chain_grad(chain_, direction_, dd).params);
    } else {
      overwrite(grad_direction_, dd);
    }
  }
  return dx;
}

void PaidLinear::zero_grad() {
  if (learns_magnitude(mode_)) grad_magnitude_.assign(out_dim(), 0.0);
  if (learns_direction(mode_)) overwrite(grad_direction_, Matrix(in_dim(), out_dim()));
  if (uses_chain(mode_)) overwrite(grad_chain_, Matrix(chain_.size(), chain_.dim()));
}

void PaidLinear::project_magnitude() noexcept {
  if (!learns_magnitude(mode_)) return;
  for (double& m : magnitude_) m = std::max(m, kMinMagnitude);
}

std::vector<ParamView> PaidLinear::parameters(const std::string& prefix) {
  std::vector<ParamView> out;
  if (mode_ == UpdateMode::Frozen) return out;
  if (learns_magnitude(mode_)) {
    if (grad_magnitude_.size() != magnitude_.size()) grad_magnitude_.assign(out_dim(), 0.0);
    out.push_back({prefix + ".magnitude", magnitude_, grad_magnitude_});
  }
  if (learns_direction(mode_)) {
    if (!grad_direction_.same_shape(direction_)) grad_direction_ = Matrix(in_dim(), out_dim());
    out.push_back({prefix + ".direction", direction_.data(), grad_direction_.data()});
  }
  if (uses_chain(mode_)) {
    if (!grad_chain_.same_shape(chain_.params())) grad_chain_ = Matrix(chain_.size(), chain_.dim());
    out.push_back({prefix + ".chain", chain_.params().data(), grad_chain_.data()});
  }
  return out;
}

std::size_t PaidLinear::trainable_count() const noexcept {
  std::size_t n = 0;
  if (learns_magnitude(mode_)) n += out_dim();
  if (learns_direction(mode_)) n += in_dim() * out_dim();
  if (uses_chain(mode_)) n += chain_.size() * chain_.dim();
  return n;
}

}  // namespace paid
