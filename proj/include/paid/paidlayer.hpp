#pragma once

// A linear layer y = x·W + b whose weight is held as
//
//   W_eff[:, j] = m_j * (O · d_j)
//
// with per-neuron magnitudes m, frozen unit directions d_j (columns of the
// pre-trained weight) and an orthogonal O from a Householder chain acting
// on the input space. Because O rotates every neuron by the same map, the
// Gram matrix of the unit directions is invariant under any chain update.
//
// Which of (m, d, O) are learnable is decided by UpdateMode.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "paid/householder.hpp"
#include "paid/numkit.hpp"

namespace paid {

enum class UpdateMode {
  Frozen,               // nothing learnable
  MagnitudeOnly,        // m
  DirectionFree,        // raw d entries, no renormalization
  DirectionOrthogonal,  // O
  MagDirFree,           // m and raw d
  Paid,                 // m and O
};

inline constexpr UpdateMode kAllModes[] = {
    UpdateMode::Frozen,     UpdateMode::MagnitudeOnly,       UpdateMode::DirectionFree,
    UpdateMode::DirectionOrthogonal, UpdateMode::MagDirFree, UpdateMode::Paid,
};

bool uses_chain(UpdateMode mode) noexcept;
bool learns_magnitude(UpdateMode mode) noexcept;
bool learns_direction(UpdateMode mode) noexcept;

// "frozen", "magnitude", "direction", "direction-orth", "magdir", "paid"
std::string_view to_string(UpdateMode mode) noexcept;
// Throws ConfigError on unknown names.
UpdateMode parse_update_mode(std::string_view name);

// A learnable tensor and its gradient buffer, both owned elsewhere.
struct ParamView {
  std::string name;
  std::span<double> value;
  std::span<double> grad;
};

inline constexpr double kMinMagnitude = 1e-6;

class PaidLinear {
 public:
  PaidLinear() = default;

  // Decomposes `weight` (in_dim x out_dim). The chain, when the mode uses
  // one, starts at the identity so the layer reproduces the pre-trained map.
  static PaidLinear from_pretrained(const Matrix& weight, const Vector& bias, UpdateMode mode,
                                    std::size_t r, Rng& rng, bool allow_non_identity = false);

  std::size_t in_dim() const noexcept { return direction_.rows(); }
  std::size_t out_dim() const noexcept { return direction_.cols(); }
  UpdateMode mode() const noexcept { return mode_; }

  const Vector& magnitude() const noexcept { return magnitude_; }
  Vector& magnitude() noexcept { return magnitude_; }
  const Matrix& direction() const noexcept { return direction_; }
  Matrix& direction() noexcept { return direction_; }
  const HouseholderChain& chain() const noexcept { return chain_; }
  HouseholderChain& chain() noexcept { return chain_; }
  const Vector& bias() const noexcept { return bias_; }

  Matrix effective_weight() const;

  // x: batch x in_dim. Caches what backward needs.
  Matrix forward(const Matrix& x);
  // Writes the gradients of every learnable parameter and returns dL/dx.
  // Throws StateError if no forward pass is cached for this batch shape.
  Matrix backward(const Matrix& dy);

  // Empty for parameters the mode freezes.
  const Vector& grad_magnitude() const noexcept { return grad_magnitude_; }
  const Matrix& grad_direction() const noexcept { return grad_direction_; }
  const Matrix& grad_chain() const noexcept { return grad_chain_; }

  void zero_grad();
  std::vector<ParamView> parameters(const std::string& prefix);
  std::size_t trainable_count() const noexcept;

  // Clamps learned magnitudes to >= kMinMagnitude so a neuron cannot flip
  // sign (a flip would negate its direction and change the pairwise angles).
  void project_magnitude() noexcept;

 private:
  UpdateMode mode_ = UpdateMode::Frozen;
  Matrix original_;  // the pre-trained weight, used verbatim in Frozen mode
  Vector magnitude_;
  Matrix direction_;
  HouseholderChain chain_;
  Vector bias_;

  Vector grad_magnitude_;
  Matrix grad_direction_;
  Matrix grad_chain_;

  std::optional<Matrix> cached_x_;
  Matrix cached_rotated_;  // O·D (or raw D without a chain)
};

}  // namespace paid
