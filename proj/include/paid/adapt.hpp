#pragma once

// Continual test-time adaptation: source feature statistics, the
// statistics-alignment objective and the predict-then-adapt stream loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "paid/bench.hpp"
#include "paid/nnmodel.hpp"
#include "paid/numkit.hpp"
#include "paid/optimizer.hpp"
#include "paid/paidlayer.hpp"

namespace paid {

struct SourceStats {
  Vector mu;
  Vector sigma;
  std::size_t n_samples = 0;
};

// Population mean/std of forward_features over all samples (two-pass).
// Throws ConfigError for fewer than 2 samples.
SourceStats compute_source_stats(Network& net, const Matrix& samples, std::size_t batch_size = 256);
SourceStats stats_from_features(const Matrix& features);

struct AlignmentLoss {
  double loss = 0.0;
  double mean_gap = 0.0;  // ||mu_s - mu_t||
  double std_gap = 0.0;   // ||sigma_s - sigma_t||, 0 when skipped
  Matrix d_features;
  bool sigma_skipped = false;  // batch of one: the std term is undefined
};

// L = ||mu_s - mu_t|| + lambda ||sigma_s - sigma_t|| with unsquared L2 norms
// and sigma_t = sqrt(var + kStdEpsilon). At a zero gap the norm's
// subgradient 0 is used.
AlignmentLoss alignment_loss(const SourceStats& stats, const Matrix& features, double lambda);

struct AdaptConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double lambda = 1.0;
  std::size_t batch_size = 64;
  std::size_t r = 12;
  UpdateMode mode = UpdateMode::Paid;
  LayerSelector selector = LayerSelector::all();
  std::size_t warmup_steps = 0;
  double warmup_lr_scale = 0.1;
  std::size_t steps_per_batch = 1;
  bool allow_non_identity = false;
  std::uint64_t seed = 0;

  AdamWConfig optimizer() const {
    return {learning_rate, beta1, beta2, weight_decay, 1e-8};
  }
  void validate() const;
};

struct StepResult {
  std::vector<int> predictions;  // made before the update
  double loss = 0.0;             // alignment loss before the update
  bool sigma_skipped = false;
};

// (1) predict with the current parameters, (2) alignment loss on the
// batch features, (3) backward, (4) one optimizer step. Repeated
// steps_per_batch times; predictions come from the first pass only.
// Throws ConfigError if the network has not been injected.
StepResult adapt_step(Network& net, const Matrix& x, const SourceStats& stats,
                      const AdaptConfig& cfg, AdamW& opt, double lr_scale = 1.0);

struct LayerGeometry {
  std::string layer;
  double delta_m = 0.0;
  double delta_a = 0.0;
  double delta_s = 0.0;
  double gram_deviation = 0.0;  // max |G(current) - G(pretrained)|
};

struct GeometrySnapshot {
  double delta_m = 0.0;  // unweighted means over injected layers
  double delta_a = 0.0;
  double delta_s = 0.0;
  double max_delta_s = 0.0;
  double max_gram_deviation = 0.0;
  std::vector<LayerGeometry> layers;
};

// Compares every injected layer's effective weight with its pre-trained
// weight.
GeometrySnapshot geometry_snapshot(const Network& net);

struct SegmentReport {
  std::string domain;
  int severity = 0;
  std::size_t round = 0;
  std::size_t n_samples = 0;
  std::size_t n_batches = 0;
  std::optional<double> error_rate;  // absent when the stream has no labels
  double mean_loss = 0.0;
  std::size_t sigma_skipped_batches = 0;
  GeometrySnapshot geometry;  // taken at the end of the segment
};

struct AdaptReport {
  std::vector<SegmentReport> segments;
  std::optional<double> mean_error;         // unweighted over segments
  std::vector<double> round_mean_errors;    // one per round
  std::vector<double> loss_trace;           // one per batch
  double wall_time_s = 0.0;
};

// Observer for each batch; used by tests to audit parameters mid-stream.
using BatchHook = std::function<void(std::size_t segment, std::size_t batch, const Network&)>;

// Streams every segment in order without resetting anything in between.
// Throws ConfigError on an empty stream or an uninjected network.
AdaptReport run_ctta(Network& net, const DomainStream& stream, const SourceStats& stats,
                     const AdaptConfig& cfg, const BatchHook& hook = {});

// Variant used for label-hygiene checks: strips labels before adapting.
AdaptReport run_ctta_unlabeled(Network& net, const DomainStream& stream, const SourceStats& stats,
                               const AdaptConfig& cfg, const BatchHook& hook = {});

}  // namespace paid
