#include "paid/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>

#include "paid/adapt.hpp"
#include "paid/errors.hpp"
#include "paid/householder.hpp"
#include "paid/nnmodel.hpp"
#include "paid/numkit.hpp"
#include "paid/paidlayer.hpp"

namespace paid {

namespace {

// Entries whose analytic and numeric values are both below this are
// compared absolutely.
constexpr double kAbsFloor = 1e-7;

class Suite {
 public:
  explicit Suite(const GradcheckOptions& opt) : opt_(opt) {}

  // Compares `analytic` with central differences of `loss` over the
  // values in `param`, perturbed in place and restored.
  void check(const std::string& name, std::span<double> param, Vector analytic,
             const std::function<double()>& loss) {
    if (analytic.size() != param.size()) throw ShapeError("gradcheck: " + name + " size mismatch");
    if (opt_.inject_fault) {
      for (double& g : analytic) g += 1e-2 * (std::abs(g) + 1.0);
    }
    Vector numeric(param.size());
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double saved = param[i];
      param[i] = saved + opt_.step;
      const double fp = loss();
      param[i] = saved - opt_.step;
      const double fm = loss();
      param[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("gradcheck: non-finite loss in " + name);
      numeric[i] = (fp - fm) / (2.0 * opt_.step);
    }
    record(name, analytic, numeric);
  }

  void record(const std::string& name, const Vector& analytic, const Vector& numeric) {
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [&](const GradcheckEntry& e) { return e.name == name; });
    if (it == entries_.end()) {
      entries_.push_back({name, 0, 0.0, true});
      it = entries_.end() - 1;
    }
    const double err = max_relative_error(analytic, numeric, kAbsFloor);
    it->n_checked += analytic.size();
    it->max_rel_error = std::max(it->max_rel_error, err);
    it->passed = it->max_rel_error <= opt_.tolerance;
  }

  std::vector<GradcheckEntry> take() { return std::move(entries_); }

 private:
  const GradcheckOptions& opt_;
  std::vector<GradcheckEntry> entries_;
};

Vector to_vector(const Matrix& m) { return {m.data().begin(), m.data().end()}; }

double inner(const Matrix& a, const Matrix& b) { return dot(a.data(), b.data()); }

void check_householder(Suite& suite, Rng& rng, std::size_t dim) {
  for (std::size_t r : {std::size_t{1}, std::size_t{3}, dim}) {
    HouseholderChain chain = random_chain(dim, r, rng);
    Matrix x = rng_gaussian(rng, dim, 3, 1.0);
    const Matrix up = rng_gaussian(rng, dim, 3, 1.0);
    const ChainGrad g = chain_grad(chain, x, up);
    auto loss = [&] { return inner(up, chain_apply(chain, x)); };
    suite.check("householder.chain_grad.params", chain.params().data(), to_vector(g.params), loss);
    suite.check("householder.chain_grad.x", x.data(), to_vector(g.x), loss);
  }
}

void check_paidlayer(Suite& suite, Rng& rng, std::size_t dim) {
  const std::size_t in = dim;
  const std::size_t out = dim + 2;
  for (UpdateMode mode : kAllModes) {
    const Matrix w = rng_gaussian(rng, in, out, 0.7);
    Vector bias(out);
    for (double& b : bias) b = rng.gaussian();
    PaidLinear layer = PaidLinear::from_pretrained(w, bias, mode, 4, rng);
    if (uses_chain(mode)) layer.chain().params() = random_chain(in, 4, rng).params();
    Matrix x = rng_gaussian(rng, 5, in, 1.0);
    const Matrix up = rng_gaussian(rng, 5, out, 1.0);
    layer.zero_grad();
    layer.forward(x);
    const Matrix dx = layer.backward(up);
    auto loss = [&] { return inner(up, layer.forward(x)); };
    const std::string base = "paidlayer." + std::string(to_string(mode));
    for (const ParamView& p : layer.parameters("layer")) {
      const std::string part = p.name.substr(p.name.find('.') + 1);
      suite.check(base + "." + part, p.value, Vector(p.grad.begin(), p.grad.end()), loss);
    }
    suite.check(base + ".x", x.data(), to_vector(dx), loss);
  }
}

ModelConfig small_model(ModelKind kind) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.dim = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 1.5;
  cfg.tokens = kind == ModelKind::Mlp ? 1 : 4;
  cfg.n_classes = 3;
  cfg.input_dim = 12;
  cfg.feature_depth = 1;
  cfg.init_std = 0.0;
  return cfg;
}

void jitter(std::vector<ParamView>& params, Rng& rng, double scale) {
  for (ParamView& p : params)
    for (double& v : p.value) v += scale * rng.gaussian();
}

void check_network_pretrain(Suite& suite, Rng& rng, ModelKind kind) {
  Network net = Network::build(small_model(kind), rng);
  auto params = net.parameters();
  jitter(params, rng, 0.05);
  const Matrix x = rng_gaussian(rng, 4, 12, 1.0);
  std::vector<int> labels{0, 2, 1, 2};
  const Matrix gf = rng_gaussian(rng, 4, 8, 1.0);
  auto loss = [&] {
    const ForwardResult f = net.forward(x);
    return softmax_cross_entropy(f.logits, labels).loss + inner(gf, f.features);
  };
  const ForwardResult f = net.forward(x);
  const CrossEntropy ce = softmax_cross_entropy(f.logits, labels);
  net.zero_grad();
  net.backward(&gf, &ce.d_logits);
  const std::string base = "nnmodel." + std::string(to_string(kind)) + ".pretrain.";
  for (const ParamView& p : params) {
    suite.check(base + p.name, p.value, Vector(p.grad.begin(), p.grad.end()), loss);
  }
}

void check_network_adapt(Suite& suite, Rng& rng, ModelKind kind, UpdateMode mode) {
  Network net = Network::build(small_model(kind), rng);
  auto dense = net.parameters();
  jitter(dense, rng, 0.05);
  net.inject_paid(LayerSelector::all(), mode, 4, rng);
  for (auto& [name, layer] : net.linear_layers()) {
    PaidLinear* p = layer->paid();
    if (p && uses_chain(mode)) p->chain().params() = random_chain(p->in_dim(), 4, rng).params();
  }
  const Matrix x = rng_gaussian(rng, 5, 12, 1.0);
  SourceStats stats;
  for (std::size_t k = 0; k < 8; ++k) {
    stats.mu.push_back(0.3 * rng.gaussian());
    stats.sigma.push_back(0.5 + rng.uniform());
  }
  stats.n_samples = 100;
  auto loss = [&] { return alignment_loss(stats, net.forward(x).features, 0.8).loss; };
  const AlignmentLoss al = alignment_loss(stats, net.forward(x).features, 0.8);
  net.zero_grad();
  net.backward(&al.d_features, nullptr);
  const std::string base =
      "nnmodel." + std::string(to_string(kind)) + ".adapt." + std::string(to_string(mode)) + ".";
  for (const ParamView& p : net.parameters()) {
    // Group per parameter kind across blocks to keep the report short.
    const std::string part = p.name.substr(p.name.rfind('.') + 1);
    suite.check(base + part, p.value, Vector(p.grad.begin(), p.grad.end()), loss);
  }
}

void check_alignment(Suite& suite, Rng& rng) {
  for (std::size_t batch : {std::size_t{1}, std::size_t{2}, std::size_t{7}}) {
    SourceStats stats;
    for (std::size_t k = 0; k < 5; ++k) {
      stats.mu.push_back(rng.gaussian());
      stats.sigma.push_back(0.2 + rng.uniform());
    }
    stats.n_samples = 10;
    for (double lambda : {0.0, 0.1, 1.0}) {
      Matrix z = rng_gaussian(rng, batch, 5, 1.5);
      const AlignmentLoss al = alignment_loss(stats, z, lambda);
      auto loss = [&] { return alignment_loss(stats, z, lambda).loss; };
      suite.check("adapt.alignment_loss", z.data(), to_vector(al.d_features), loss);
    }
  }
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& options) {
  if (options.sizes.empty()) throw ConfigError("gradcheck: no sizes given");
  for (std::size_t s : options.sizes)
    if (s < 2) throw ConfigError("gradcheck: sizes must be >= 2");
  Suite suite(options);
  Rng rng(options.seed);
  for (std::size_t dim : options.sizes) {
    check_householder(suite, rng, dim);
    check_paidlayer(suite, rng, dim);
  }
  for (ModelKind kind : {ModelKind::TinyTransformer, ModelKind::Mlp}) {
    check_network_pretrain(suite, rng, kind);
    check_network_adapt(suite, rng, kind, UpdateMode::Paid);
    check_network_adapt(suite, rng, kind, UpdateMode::MagDirFree);
  }
  check_alignment(suite, rng);
  return suite.take();
}

bool all_passed(const std::vector<GradcheckEntry>& entries) {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed; });
}

}  // namespace paid
