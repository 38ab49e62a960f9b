#include "paid/bench.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <string>

#include "paid/errors.hpp"

namespace paid {

namespace {

// Rows: kinds in enum order. Columns: severity 1..5.
constexpr std::array<std::array<double, 5>, 6> kSeverityTable = {{
    {0.15, 0.25, 0.40, 0.60, 0.80},  // gaussian noise std
    {0.04, 0.08, 0.14, 0.22, 0.32},  // impulse fraction
    {0.50, 0.75, 1.00, 1.40, 1.80},  // blur sigma
    {0.75, 0.60, 0.45, 0.32, 0.22},  // contrast scale
    {0.25, 0.50, 0.75, 1.00, 1.30},  // brightness offset
    {24, 12, 7, 5, 3},               // pixelate levels
}};

Matrix class_templates(Rng& rng, const SourceRecipe& recipe) {
  const std::size_t side = recipe.image_side;
  Matrix out(recipe.n_classes, side * side);
  for (std::size_t c = 0; c < recipe.n_classes; ++c) {
    auto img = out.row(c);
    for (std::size_t b = 0; b < recipe.bumps_per_class; ++b) {
      const double cx = rng.uniform(0.0, static_cast<double>(side - 1));
      const double cy = rng.uniform(0.0, static_cast<double>(side - 1));
      const double width = rng.uniform(0.8, 2.0);
      const double amp = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.6, 1.2);
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          const double dx = static_cast<double>(x) - cx;
          const double dy = static_cast<double>(y) - cy;
          img[y * side + x] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
        }
      }
    }
    // Zero mean, unit RMS.
    double mean = 0.0;
    for (double v : img) mean += v;
    mean /= static_cast<double>(img.size());
    double sq = 0.0;
    for (double& v : img) {
      v -= mean;
      sq += v * v;
    }
    const double rms = std::sqrt(sq / static_cast<double>(img.size()));
    for (double& v : img) v /= rms;
  }
  return out;
}

SyntheticDataset draw_split(Rng& rng, const Matrix& templates, const SourceRecipe& recipe,
                            std::size_t n) {
  SyntheticDataset out;
  out.n_classes = recipe.n_classes;
  out.samples = Matrix(n, recipe.input_dim());
  out.labels.resize(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % recipe.n_classes);
  const auto order = permutation(rng, n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[order[i]];
    out.labels[i] = label;
    auto tpl = templates.row(static_cast<std::size_t>(label));
    auto dst = out.samples.row(i);
    const double amp = 1.0 + recipe.amplitude_jitter * rng.gaussian();
    for (std::size_t k = 0; k < dst.size(); ++k)
      dst[k] = amp * tpl[k] + recipe.noise_std * rng.gaussian();
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int half = static_cast<int>(std::ceil(2.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * half + 1));
  double sum = 0.0;
  for (int i = -half; i <= half; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + half)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

void blur_image(std::span<double> img, std::size_t side, const std::vector<double>& kernel) {
  const int half = static_cast<int>(kernel.size() / 2);
  const int n = static_cast<int>(side);
  std::vector<double> tmp(img.size());
  auto clamp = [n](int i) { return std::clamp(i, 0, n - 1); };
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double s = 0.0;
      for (int k = -half; k <= half; ++k)
        s += kernel[static_cast<std::size_t>(k + half)] * img[static_cast<std::size_t>(y * n + clamp(x + k))];
      tmp[static_cast<std::size_t>(y * n + x)] = s;
    }
  }
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double s = 0.0;
      for (int k = -half; k <= half; ++k)
        s += kernel[static_cast<std::size_t>(k + half)] * tmp[static_cast<std::size_t>(clamp(y + k) * n + x)];
      img[static_cast<std::size_t>(y * n + x)] = s;
    }
  }
}

// Solves a·x = b in place (a is n x n, b is n x m) by Gaussian elimination
// with partial pivoting.
Matrix solve(Matrix a, Matrix b) {
  const std::size_t n = a.rows();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (std::abs(a(piv, col)) < 1e-300) throw NumericError("linear probe: singular system");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
      for (std::size_t c = 0; c < b.cols(); ++c) std::swap(b(col, c), b(piv, c));
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      for (std::size_t c = 0; c < b.cols(); ++c) b(r, c) -= f * b(col, c);
    }
  }
  Matrix x(n, b.cols());
  for (std::size_t r = n; r-- > 0;) {
    for (std::size_t c = 0; c < b.cols(); ++c) {
      double s = b(r, c);
      for (std::size_t k = r + 1; k < n; ++k) s -= a(r, k) * x(k, c);
      x(r, c) = s / a(r, r);
    }
  }
  return x;
}

Matrix with_bias_column(const Matrix& x) {
  Matrix out(x.rows(), x.cols() + 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto src = x.row(r);
    auto dst = out.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
    dst[x.cols()] = 1.0;
  }
  return out;
}

}  // namespace

void SourceRecipe::validate() const {
  if (n_classes < 2) throw ConfigError("bench: n_classes must be >= 2");
  if (image_side < 2) throw ConfigError("bench: image_side must be >= 2");
  if (n_train == 0 || n_test == 0) throw ConfigError("bench: split sizes must be >= 1");
  if (bumps_per_class == 0) throw ConfigError("bench: bumps_per_class must be >= 1");
  if (noise_std < 0.0 || amplitude_jitter < 0.0) throw ConfigError("bench: negative noise");
}

SyntheticDataset SyntheticDataset::subset(std::span<const std::size_t> indices) const {
  SyntheticDataset out;
  out.n_classes = n_classes;
  out.samples = Matrix(indices.size(), samples.cols());
  out.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = samples.row(indices[i]);
    std::copy(src.begin(), src.end(), out.samples.row(i).begin());
    out.labels[i] = labels[indices[i]];
  }
  return out;
}

SyntheticDataset SyntheticDataset::head(std::size_t n) const {
  n = std::min(n, size());
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return subset(idx);
}

SourceSplit generate_source(std::uint64_t seed, const SourceRecipe& recipe) {
  recipe.validate();
  const Rng root(seed);
  Rng tpl_rng = root.fork(1);
  Rng train_rng = root.fork(2);
  Rng test_rng = root.fork(3);
  const Matrix templates = class_templates(tpl_rng, recipe);
  return {draw_split(train_rng, templates, recipe, recipe.n_train),
          draw_split(test_rng, templates, recipe, recipe.n_test)};
}

SyntheticDataset relabel(const SyntheticDataset& data, std::span<const int> permutation) {
  if (permutation.size() != data.n_classes) throw ShapeError("relabel: permutation size");
  SyntheticDataset out = data;
  for (int& l : out.labels) l = permutation[static_cast<std::size_t>(l)];
  return out;
}

std::string_view to_string(CorruptionKind kind) noexcept {
  switch (kind) {
    case CorruptionKind::GaussianNoise: return "gaussian_noise";
    case CorruptionKind::ImpulseNoise: return "impulse_noise";
    case CorruptionKind::Blur: return "blur";
    case CorruptionKind::Contrast: return "contrast";
    case CorruptionKind::Brightness: return "brightness";
    case CorruptionKind::Pixelate: return "pixelate";
  }
  return "unknown";
}

CorruptionKind parse_corruption_kind(std::string_view name) {
  for (CorruptionKind k : kAllCorruptions)
    if (to_string(k) == name) return k;
  throw ConfigError("unknown corruption kind '" + std::string(name) + "'");
}

std::string Corruption::name() const { return std::string(to_string(kind)); }

double corruption_parameter(CorruptionKind kind, int severity) {
  if (severity < 0 || severity > 5) {
    throw ConfigError("corruption severity " + std::to_string(severity) + " outside 0..5");
  }
  if (severity == 0) {
    switch (kind) {
      case CorruptionKind::Contrast: return 1.0;
      case CorruptionKind::Pixelate: return 0.0;  // no quantization
      default: return 0.0;
    }
  }
  return kSeverityTable[static_cast<std::size_t>(kind)][static_cast<std::size_t>(severity - 1)];
}

Matrix apply_corruption(const Matrix& x, const Corruption& corruption, Rng& rng,
                        std::size_t image_side) {
  const double p = corruption_parameter(corruption.kind, corruption.severity);
  if (corruption.severity == 0) return x;
  if (corruption.kind == CorruptionKind::Blur && x.cols() != image_side * image_side) {
    throw ShapeError("blur: sample width " + std::to_string(x.cols()) + " is not " +
                     std::to_string(image_side) + "^2");
  }
  Matrix out = x;
  switch (corruption.kind) {
    case CorruptionKind::GaussianNoise:
      for (double& v : out.data()) v += p * rng.gaussian();
      break;
    case CorruptionKind::ImpulseNoise:
      for (double& v : out.data()) {
        const double u = rng.uniform();
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        if (u < p) v = sign * kValueRange;
      }
      break;
    case CorruptionKind::Blur: {
      const auto kernel = gaussian_kernel(p);
      for (std::size_t r = 0; r < out.rows(); ++r) blur_image(out.row(r), image_side, kernel);
      break;
    }
    case CorruptionKind::Contrast:
      for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(row.size());
        for (double& v : row) v = mean + p * (v - mean);
      }
      break;
    case CorruptionKind::Brightness:
      for (double& v : out.data()) v += p;
      break;
    case CorruptionKind::Pixelate: {
      const double step = 2.0 * kValueRange / (p - 1.0);
      for (double& v : out.data()) {
        const double c = std::clamp(v, -kValueRange, kValueRange);
        v = -kValueRange + step * std::round((c + kValueRange) / step);
      }
      break;
    }
  }
  return out;
}

DomainSequence default_domain_sequence(int severity, std::size_t rounds) {
  DomainSequence seq;
  for (CorruptionKind k : {CorruptionKind::GaussianNoise, CorruptionKind::ImpulseNoise,
                           CorruptionKind::Blur, CorruptionKind::Brightness,
                           CorruptionKind::Contrast, CorruptionKind::Pixelate})
    seq.domains.push_back({k, severity});
  seq.rounds = rounds;
  return seq;
}

DomainStream::DomainStream(SyntheticDataset test, DomainSequence sequence, std::size_t batch_size,
                           std::uint64_t seed, std::size_t image_side)
    : test_(std::move(test)),
      sequence_(std::move(sequence)),
      batch_size_(batch_size),
      seed_(seed),
      image_side_(image_side) {
  if (sequence_.domains.empty()) throw ConfigError("domain sequence is empty");
  if (sequence_.rounds == 0) throw ConfigError("domain sequence needs rounds >= 1");
  if (batch_size_ == 0) throw ConfigError("batch_size must be >= 1");
  if (test_.size() == 0) throw ConfigError("domain stream over an empty test split");
  for (const Corruption& c : sequence_.domains) (void)corruption_parameter(c.kind, c.severity);
}

Segment DomainStream::segment(std::size_t i) const {
  if (i >= size()) throw ShapeError("segment index out of range");
  Segment seg;
  seg.index = i;
  seg.round = sequence_.round_of(i);
  seg.domain = sequence_.domain_of(i);
  Rng rng = Rng(seed_).fork(1000 + i);
  const auto order = permutation(rng, test_.size());
  const SyntheticDataset shuffled = test_.subset(order);
  Rng noise = rng.fork(1);
  const Matrix corrupted = apply_corruption(shuffled.samples, seg.domain, noise, image_side_);
  for (std::size_t start = 0; start < shuffled.size(); start += batch_size_) {
    const std::size_t n = std::min(batch_size_, shuffled.size() - start);
    Batch b;
    b.x = Matrix(n, corrupted.cols(),
                 std::vector<double>(corrupted.data().begin() + static_cast<std::ptrdiff_t>(start * corrupted.cols()),
                                     corrupted.data().begin() + static_cast<std::ptrdiff_t>((start + n) * corrupted.cols())));
    b.labels = std::vector<int>(shuffled.labels.begin() + static_cast<std::ptrdiff_t>(start),
                                shuffled.labels.begin() + static_cast<std::ptrdiff_t>(start + n));
    seg.batches.push_back(std::move(b));
  }
  return seg;
}

DomainStream make_domain_sequence(const SyntheticDataset& test, DomainSequence sequence,
                                  std::size_t batch_size, std::uint64_t seed,
                                  std::size_t image_side) {
  return DomainStream(test, std::move(sequence), batch_size, seed, image_side);
}

double evaluate_accuracy(Network& net, const SyntheticDataset& data, std::size_t batch_size) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - start);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = start + i;
    const SyntheticDataset part = data.subset(idx);
    const auto pred = argmax_rows(net.forward_logits(part.samples));
    for (std::size_t i = 0; i < n; ++i) correct += pred[i] == part.labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

PretrainResult pretrain_source(Network& net, const SyntheticDataset& train,
                               const SyntheticDataset& test, const PretrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ConfigError("pretrain: batch_size must be >= 1");
  PretrainResult result;
  if (cfg.epochs > 0) {
    net.set_phase(Phase::Pretrain);
    AdamW opt({cfg.learning_rate, 0.9, 0.999, cfg.weight_decay, 1e-8});
    Rng rng = Rng(cfg.seed).fork(77);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      const auto order = permutation(rng, train.size());
      for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
        const std::size_t n = std::min(cfg.batch_size, train.size() - start);
        const SyntheticDataset batch =
            train.subset(std::span<const std::size_t>(order).subspan(start, n));
        net.zero_grad();
        const ForwardResult fwd = net.forward(batch.samples);
        const CrossEntropy ce = softmax_cross_entropy(fwd.logits, batch.labels);
        if (!std::isfinite(ce.loss)) {
          throw NumericError("pretrain diverged: non-finite loss at epoch " +
                             std::to_string(epoch) + ", step " + std::to_string(result.steps) +
                             " (lr " + std::to_string(cfg.learning_rate) + ")");
        }
        net.backward(nullptr, &ce.d_logits);
        const auto params = net.parameters();
        opt.step(params);
        result.loss_trace.push_back(ce.loss);
        ++result.steps;
      }
    }
  }
  result.clean_accuracy = evaluate_accuracy(net, test);
  return result;
}

double linear_probe_accuracy(const SyntheticDataset& train, const SyntheticDataset& test,
                             double ridge) {
  const Matrix x = with_bias_column(train.samples);
  Matrix y(train.size(), train.n_classes);
  for (std::size_t i = 0; i < train.size(); ++i) y(i, static_cast<std::size_t>(train.labels[i])) = 1.0;
  Matrix gram = matmul_tn(x, x);
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += ridge * static_cast<double>(train.size());
  const Matrix w = solve(gram, matmul_tn(x, y));
  const auto pred = argmax_rows(matmul(with_bias_column(test.samples), w));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) correct += pred[i] == test.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace paid
