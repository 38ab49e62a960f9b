#include "paid/adapt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "paid/errors.hpp"
#include "paid/geometry.hpp"

namespace paid {

SourceStats stats_from_features(const Matrix& features) {
  if (features.rows() < 2) throw ConfigError("source statistics need at least 2 samples");
  MeanStd ms = batch_mean_std(features);
  return {std::move(ms.mean), std::move(ms.std), features.rows()};
}

SourceStats compute_source_stats(Network& net, const Matrix& samples, std::size_t batch_size) {
  if (samples.rows() < 2) throw ConfigError("source statistics need at least 2 samples");
  if (batch_size == 0) throw ConfigError("source statistics: batch_size must be >= 1");
  Matrix all(samples.rows(), net.config().dim);
  for (std::size_t start = 0; start < samples.rows(); start += batch_size) {
    const std::size_t n = std::min(batch_size, samples.rows() - start);
    const auto first = samples.data().begin() + static_cast<std::ptrdiff_t>(start * samples.cols());
    Matrix part(n, samples.cols(),
                std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n * samples.cols())));
    const Matrix z = net.forward_features(part);
    std::copy(z.data().begin(), z.data().end(),
              all.data().begin() + static_cast<std::ptrdiff_t>(start * z.cols()));
  }
  return stats_from_features(all);
}

AlignmentLoss alignment_loss(const SourceStats& stats, const Matrix& z, double lambda) {
  const std::size_t batch = z.rows();
  const std::size_t dim = z.cols();
  if (batch == 0) throw ShapeError("alignment_loss on an empty batch");
  if (stats.mu.size() != dim || stats.sigma.size() != dim) {
    throw ShapeError("alignment_loss: feature width " + std::to_string(dim) +
                     " != statistics width " + std::to_string(stats.mu.size()));
  }
  const MeanStd target = batch_mean_std(z);
  AlignmentLoss out;
  out.d_features = Matrix(batch, dim);
  const double inv_b = 1.0 / static_cast<double>(batch);

  Vector mean_gap(dim);
  for (std::size_t d = 0; d < dim; ++d) mean_gap[d] = target.mean[d] - stats.mu[d];
  out.mean_gap = norm2(mean_gap);
  if (out.mean_gap > 0.0) {
    for (std::size_t b = 0; b < batch; ++b) {
      auto g = out.d_features.row(b);
      for (std::size_t d = 0; d < dim; ++d) g[d] += mean_gap[d] / out.mean_gap * inv_b;
    }
  }

  out.sigma_skipped = batch < 2;
  if (!out.sigma_skipped) {
    Vector std_gap(dim);
    for (std::size_t d = 0; d < dim; ++d) std_gap[d] = target.std[d] - stats.sigma[d];
    out.std_gap = norm2(std_gap);
    if (out.std_gap > 0.0 && lambda != 0.0) {
      for (std::size_t b = 0; b < batch; ++b) {
        auto zr = z.row(b);
        auto g = out.d_features.row(b);
        for (std::size_t d = 0; d < dim; ++d) {
          const double dsigma = (zr[d] - target.mean[d]) * inv_b / target.std[d];
          g[d] += lambda * std_gap[d] / out.std_gap * dsigma;
        }
      }
    }
  }
  out.loss = out.mean_gap + lambda * out.std_gap;
  return out;
}

void AdaptConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("adapt: learning_rate must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("adapt: betas must lie in (0, 1)");
  }
  if (!(lambda >= 0.0)) throw ConfigError("adapt: lambda must be >= 0");
  if (weight_decay < 0.0) throw ConfigError("adapt: weight_decay must be >= 0");
  if (batch_size == 0) throw ConfigError("adapt: batch_size must be >= 1");
  if (steps_per_batch == 0) throw ConfigError("adapt: steps_per_batch must be >= 1");
  if (selector.empty()) throw ConfigError("adapt: selector is empty");
  if (uses_chain(mode) && r % 2 != 0 && !allow_non_identity) {
    throw ConfigError("adapt: r = " + std::to_string(r) +
                      " is odd; set allow_non_identity to start away from the identity");
  }
  if (!(warmup_lr_scale > 0.0)) throw ConfigError("adapt: warmup_lr_scale must be > 0");
}

StepResult adapt_step(Network& net, const Matrix& x, const SourceStats& stats,
                      const AdaptConfig& cfg, AdamW& opt, double lr_scale) {
  if (!net.injected()) throw ConfigError("adapt_step: network has no injected layers");
  StepResult result;
  for (std::size_t it = 0; it < cfg.steps_per_batch; ++it) {
    const ForwardResult fwd = net.forward(x);
    const AlignmentLoss loss = alignment_loss(stats, fwd.features, cfg.lambda);
    if (!std::isfinite(loss.loss)) throw NumericError("adapt_step: non-finite alignment loss");
    if (it == 0) {
      result.predictions = argmax_rows(fwd.logits);
      result.loss = loss.loss;
      result.sigma_skipped = loss.sigma_skipped;
    }
    const auto params = net.parameters();
    if (params.empty()) break;
    net.zero_grad();
    net.backward(&loss.d_features, nullptr);
    opt.step(params, lr_scale);
    net.project_constraints();
  }
  return result;
}

GeometrySnapshot geometry_snapshot(const Network& net) {
  GeometrySnapshot snap;
  for (const auto& [name, layer] : net.linear_layers()) {
    if (!layer->injected()) continue;
    const Matrix current = layer->effective_weight();
    const Matrix& source = layer->weight();
    LayerGeometry g;
    g.layer = name;
    const GeometryDelta d = geometry_delta(current, source);
    g.delta_m = d.magnitude;
    g.delta_a = d.angle;
    g.delta_s = d.structure;
    g.gram_deviation = max_abs_diff(pairwise_gram(decompose(current).direction),
                                    pairwise_gram(decompose(source).direction));
    snap.delta_m += g.delta_m;
    snap.delta_a += g.delta_a;
    snap.delta_s += g.delta_s;
    snap.max_delta_s = std::max(snap.max_delta_s, g.delta_s);
    snap.max_gram_deviation = std::max(snap.max_gram_deviation, g.gram_deviation);
    snap.layers.push_back(std::move(g));
  }
  if (!snap.layers.empty()) {
    const double n = static_cast<double>(snap.layers.size());
    snap.delta_m /= n;
    snap.delta_a /= n;
    snap.delta_s /= n;
  }
  return snap;
}

namespace {

AdaptReport run_stream(Network& net, const DomainStream& stream, const SourceStats& stats,
                       const AdaptConfig& cfg, const BatchHook& hook, bool strip_labels) {
  cfg.validate();
  if (!net.injected()) throw ConfigError("run_ctta: network has no injected layers");
  if (stream.size() == 0) throw ConfigError("run_ctta: empty domain sequence");
  const auto t0 = std::chrono::steady_clock::now();

  AdaptReport report;
  AdamW opt(cfg.optimizer());
  std::size_t global_step = 0;
  bool labeled = true;
  std::vector<double> round_sum(stream.sequence().rounds, 0.0);
  std::vector<std::size_t> round_count(stream.sequence().rounds, 0);

  for (std::size_t s = 0; s < stream.size(); ++s) {
    Segment seg = stream.segment(s);
    SegmentReport row;
    row.domain = seg.domain.name();
    row.severity = seg.domain.severity;
    row.round = seg.round;
    std::size_t wrong = 0;
    bool seg_labeled = true;
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < seg.batches.size(); ++b) {
      Batch& batch = seg.batches[b];
      if (strip_labels) batch.labels.reset();
      const double lr_scale = global_step < cfg.warmup_steps ? cfg.warmup_lr_scale : 1.0;
      const StepResult step = adapt_step(net, batch.x, stats, cfg, opt, lr_scale);
      ++global_step;
      if (batch.labels) {
        for (std::size_t i = 0; i < step.predictions.size(); ++i)
          wrong += step.predictions[i] != (*batch.labels)[i] ? 1 : 0;
      } else {
        seg_labeled = false;
      }
      loss_sum += step.loss;
      row.sigma_skipped_batches += step.sigma_skipped ? 1 : 0;
      row.n_samples += batch.x.rows();
      report.loss_trace.push_back(step.loss);
      if (hook) hook(s, b, net);
    }
    row.n_batches = seg.batches.size();
    row.mean_loss = row.n_batches == 0 ? 0.0 : loss_sum / static_cast<double>(row.n_batches);
    if (seg_labeled && row.n_samples > 0) {
      row.error_rate = static_cast<double>(wrong) / static_cast<double>(row.n_samples);
      round_sum[row.round] += *row.error_rate;
      ++round_count[row.round];
    } else {
      labeled = false;
    }
    row.geometry = geometry_snapshot(net);
    report.segments.push_back(std::move(row));
  }

  if (labeled) {
    double total = 0.0;
    for (const SegmentReport& r : report.segments) total += *r.error_rate;
    report.mean_error = total / static_cast<double>(report.segments.size());
    for (std::size_t r = 0; r < round_sum.size(); ++r)
      report.round_mean_errors.push_back(round_sum[r] / static_cast<double>(round_count[r]));
  }
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace

AdaptReport run_ctta(Network& net, const DomainStream& stream, const SourceStats& stats,
                     const AdaptConfig& cfg, const BatchHook& hook) {
  return run_stream(net, stream, stats, cfg, hook, false);
}

AdaptReport run_ctta_unlabeled(Network& net, const DomainStream& stream, const SourceStats& stats,
                               const AdaptConfig& cfg, const BatchHook& hook) {
  return run_stream(net, stream, stats, cfg, hook, true);
}

}  // namespace paid
