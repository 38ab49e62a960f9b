#pragma once

// Synthetic source task and corruption suite.
//
// Samples are tiny single-channel images (image_side x image_side, row-major,
// flattened). Each class owns a smooth template built from a few Gaussian
// bumps; a sample is a jittered, noisy copy of its class template.
//
// Corruption parameters per severity (index 0 is the identity):
//
//   kind           parameter                   1     2     3     4     5
//   gaussian       added noise std           0.15  0.25  0.40  0.60  0.80
//   impulse        fraction replaced by ±R   0.04  0.08  0.14  0.22  0.32
//   blur           Gaussian kernel sigma     0.50  0.75  1.00  1.40  1.80
//   contrast       deviation scale           0.75  0.60  0.45  0.32  0.22
//   brightness     additive offset           0.25  0.50  0.75  1.00  1.30
//   pixelate       quantization levels        24    12     7     5     3
//
// R = kValueRange. Blur uses a separable kernel of half-width ceil(2σ) with
// clamped borders. Pixelate clamps to [-R, R] and rounds to evenly spaced
// levels.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "paid/nnmodel.hpp"
#include "paid/numkit.hpp"
#include "paid/optimizer.hpp"

namespace paid {

inline constexpr double kValueRange = 2.5;

struct SourceRecipe {
  std::size_t n_classes = 10;
  std::size_t image_side = 8;
  std::size_t n_train = 4000;
  std::size_t n_test = 1200;
  std::size_t bumps_per_class = 4;
  double noise_std = 0.35;
  double amplitude_jitter = 0.2;

  std::size_t input_dim() const { return image_side * image_side; }
  void validate() const;
};

struct SyntheticDataset {
  Matrix samples;
  std::vector<int> labels;
  std::size_t n_classes = 0;

  std::size_t size() const { return labels.size(); }
  // Rows `indices` of this dataset.
  SyntheticDataset subset(std::span<const std::size_t> indices) const;
  SyntheticDataset head(std::size_t n) const;
};

struct SourceSplit {
  SyntheticDataset train;
  SyntheticDataset test;
};

// Deterministic per (seed, recipe). Train and test draw from independent
// streams; classes are balanced within ±1 and the order is shuffled.
SourceSplit generate_source(std::uint64_t seed, const SourceRecipe& recipe);

// Maps every label l to permutation[l].
SyntheticDataset relabel(const SyntheticDataset& data, std::span<const int> permutation);

enum class CorruptionKind { GaussianNoise, ImpulseNoise, Blur, Contrast, Brightness, Pixelate };

inline constexpr CorruptionKind kAllCorruptions[] = {
    CorruptionKind::GaussianNoise, CorruptionKind::ImpulseNoise, CorruptionKind::Blur,
    CorruptionKind::Contrast,      CorruptionKind::Brightness,   CorruptionKind::Pixelate,
};

std::string_view to_string(CorruptionKind kind) noexcept;
CorruptionKind parse_corruption_kind(std::string_view name);

struct Corruption {
  CorruptionKind kind = CorruptionKind::GaussianNoise;
  int severity = 5;

  std::string name() const;
  friend bool operator==(const Corruption&, const Corruption&) = default;
};

// The table above. Throws ConfigError for severity outside 0..5.
double corruption_parameter(CorruptionKind kind, int severity);

// Corrupts every row of x (batch x side²). Severity 0 returns x unchanged.
Matrix apply_corruption(const Matrix& x, const Corruption& corruption, Rng& rng,
                        std::size_t image_side);

struct DomainSequence {
  std::vector<Corruption> domains;
  std::size_t rounds = 1;

  std::size_t segment_count() const { return domains.size() * rounds; }
  const Corruption& domain_of(std::size_t segment) const { return domains[segment % domains.size()]; }
  std::size_t round_of(std::size_t segment) const { return segment / domains.size(); }
};

// Every kind at the given severity: gaussian, impulse, blur, brightness,
// contrast, pixelate.
DomainSequence default_domain_sequence(int severity = 5, std::size_t rounds = 1);

struct Batch {
  Matrix x;
  std::optional<std::vector<int>> labels;  // only for error accounting
};

struct Segment {
  std::size_t index = 0;
  std::size_t round = 0;
  Corruption domain;
  std::vector<Batch> batches;
};

// Produces the corrupted test stream. Segment i is a function of
// (seed, i) only: a fresh shuffle of the test split, corrupted with one
// domain and cut into batches that never mix domains.
class DomainStream {
 public:
  DomainStream(SyntheticDataset test, DomainSequence sequence, std::size_t batch_size,
               std::uint64_t seed, std::size_t image_side);

  const DomainSequence& sequence() const noexcept { return sequence_; }
  std::size_t size() const noexcept { return sequence_.segment_count(); }
  std::size_t batch_size() const noexcept { return batch_size_; }

  Segment segment(std::size_t i) const;

 private:
  SyntheticDataset test_;
  DomainSequence sequence_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t image_side_;
};

DomainStream make_domain_sequence(const SyntheticDataset& test, DomainSequence sequence,
                                  std::size_t batch_size, std::uint64_t seed,
                                  std::size_t image_side);

struct PretrainConfig {
  std::size_t epochs = 25;
  std::size_t batch_size = 64;
  double learning_rate = 3e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  double clean_accuracy = 0.0;
  std::size_t steps = 0;
  std::vector<double> loss_trace;  // one entry per optimizer step
};

// Cross-entropy training of every parameter. Throws NumericError if the
// loss becomes non-finite.
PretrainResult pretrain_source(Network& net, const SyntheticDataset& train,
                               const SyntheticDataset& test, const PretrainConfig& cfg);

double evaluate_accuracy(Network& net, const SyntheticDataset& data, std::size_t batch_size = 256);

// Closed-form ridge-regression probe on one-hot targets, fitted on
// `train`, scored on `test`.
double linear_probe_accuracy(const SyntheticDataset& train, const SyntheticDataset& test,
                             double ridge = 1e-2);

}  // namespace paid
