#include "paid/nnmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "paid/errors.hpp"

namespace paid {

namespace {

constexpr double kLayerNormEps = 1e-5;

constexpr std::array<LinearSlot, kSlotCount> kSlots = {
    LinearSlot::Q, LinearSlot::K, LinearSlot::V, LinearSlot::O, LinearSlot::M1, LinearSlot::M2};

Matrix pool_tokens(const Matrix& h, std::size_t batch, std::size_t tokens) {
  Matrix out(batch, h.cols());
  const double inv = 1.0 / static_cast<double>(tokens);
  for (std::size_t b = 0; b < batch; ++b) {
    auto dst = out.row(b);
    for (std::size_t t = 0; t < tokens; ++t) {
      auto src = h.row(b * tokens + t);
      for (std::size_t d = 0; d < dst.size(); ++d) dst[d] += src[d];
    }
    for (double& v : dst) v *= inv;
  }
  return out;
}

// Adds the pooling adjoint of `d_pooled` into `dh`.
void unpool_into(Matrix& dh, const Matrix& d_pooled, std::size_t tokens) {
  const double inv = 1.0 / static_cast<double>(tokens);
  for (std::size_t b = 0; b < d_pooled.rows(); ++b) {
    auto src = d_pooled.row(b);
    for (std::size_t t = 0; t < tokens; ++t) {
      auto dst = dh.row(b * tokens + t);
      for (std::size_t d = 0; d < dst.size(); ++d) dst[d] += src[d] * inv;
    }
  }
}

void add_into(Matrix& dst, const Matrix& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

std::string block_prefix(std::size_t i) { return "block" + std::to_string(i); }

}  // namespace

std::string_view to_string(ModelKind kind) noexcept {
  return kind == ModelKind::Mlp ? "mlp" : "transformer";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "mlp") return ModelKind::Mlp;
  if (name == "transformer") return ModelKind::TinyTransformer;
  throw ConfigError("unknown model kind '" + std::string(name) + "' (expected mlp|transformer)");
}

std::size_t ModelConfig::hidden_dim() const {
  return static_cast<std::size_t>(std::lround(static_cast<double>(dim) * mlp_ratio));
}

std::size_t ModelConfig::patch_dim() const { return tokens == 0 ? 0 : input_dim / tokens; }

void ModelConfig::validate() const {
  if (dim == 0 || depth == 0 || heads == 0 || tokens == 0 || n_classes == 0 || input_dim == 0) {
    throw ConfigError("model: all counts must be >= 1");
  }
  if (dim % heads != 0) {
    throw ConfigError("model: dim " + std::to_string(dim) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  if (input_dim % tokens != 0) {
    throw ConfigError("model: input_dim " + std::to_string(input_dim) +
                      " is not divisible by tokens " + std::to_string(tokens));
  }
  if (!(mlp_ratio > 0.0) || hidden_dim() == 0) throw ConfigError("model: mlp_ratio must be > 0");
  if (kind == ModelKind::Mlp && tokens != 1) throw ConfigError("model: mlp kind requires tokens = 1");
  if (feature_depth > depth) throw ConfigError("model: feature_depth exceeds depth");
  if (init_std < 0.0) throw ConfigError("model: init_std must be >= 0");
}

std::size_t expected_parameter_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.dim;
  const std::size_t h = cfg.hidden_dim();
  const std::size_t mlp = (d * h + h) + (h * d + d);
  const std::size_t head = d * cfg.n_classes + cfg.n_classes;
  if (cfg.kind == ModelKind::Mlp) {
    return (cfg.input_dim * d + d) + cfg.depth * mlp + head;
  }
  const std::size_t attn = 4 * (d * d + d);
  const std::size_t norms = 2 * (2 * d);
  return (cfg.patch_dim() * d + d) + cfg.tokens * d + cfg.depth * (attn + norms + mlp) + 2 * d +
         head;
}

std::string_view to_string(LinearSlot slot) noexcept {
  switch (slot) {
    case LinearSlot::Q: return "q";
    case LinearSlot::K: return "k";
    case LinearSlot::V: return "v";
    case LinearSlot::O: return "o";
    case LinearSlot::M1: return "m1";
    case LinearSlot::M2: return "m2";
  }
  return "?";
}

LayerSelector LayerSelector::all() {
  LayerSelector s;
  s.bits_.fill(true);
  return s;
}

LayerSelector LayerSelector::parse(std::string_view text) {
  LayerSelector s;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == ',' || c == ' ' || c == '+') {
      ++i;
      continue;
    }
    switch (c) {
      case 'q': s.insert(LinearSlot::Q); break;
      case 'k': s.insert(LinearSlot::K); break;
      case 'v': s.insert(LinearSlot::V); break;
      case 'o': s.insert(LinearSlot::O); break;
      case 'm':
        if (i + 1 < text.size() && text[i + 1] == '1') {
          s.insert(LinearSlot::M1);
          ++i;
        } else if (i + 1 < text.size() && text[i + 1] == '2') {
          s.insert(LinearSlot::M2);
          ++i;
        } else {
          s.insert(LinearSlot::M1);
          s.insert(LinearSlot::M2);
        }
        break;
      default:
        throw ConfigError("invalid layer selector '" + std::string(text) + "'");
    }
    ++i;
  }
  if (s.empty()) throw ConfigError("layer selector '" + std::string(text) + "' is empty");
  return s;
}

bool LayerSelector::empty() const { return count() == 0; }

std::size_t LayerSelector::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), true));
}

std::string LayerSelector::to_string() const {
  std::string out;
  for (LinearSlot s : {LinearSlot::Q, LinearSlot::K, LinearSlot::V, LinearSlot::O}) {
    if (contains(s)) out += paid::to_string(s);
  }
  const bool m1 = contains(LinearSlot::M1);
  const bool m2 = contains(LinearSlot::M2);
  if (m1 && m2) {
    out += "m";
  } else if (m1) {
    out += "m1";
  } else if (m2) {
    out += "m2";
  }
  return out;
}

// ---------------------------------------------------------------------------

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Linear::Linear(std::size_t in_dim, std::size_t out_dim, double init_std, Rng& rng)
    : weight_(rng_gaussian(rng, in_dim, out_dim,
                           init_std > 0.0 ? init_std
                                          : 1.0 / std::sqrt(static_cast<double>(in_dim)))),
      bias_(out_dim, 0.0),
      grad_weight_(in_dim, out_dim),
      grad_bias_(out_dim, 0.0) {}

void Linear::inject(UpdateMode mode, std::size_t r, Rng& rng, bool allow_non_identity) {
  paid_ = PaidLinear::from_pretrained(weight_, bias_, mode, r, rng, allow_non_identity);
}

Matrix Linear::effective_weight() const { return paid_ ? paid_->effective_weight() : weight_; }

Matrix Linear::forward(const Matrix& x) {
  if (paid_) return paid_->forward(x);
  if (x.cols() != in_dim()) {
    throw ShapeError("Linear::forward: input width " + std::to_string(x.cols()) + " != " +
                     std::to_string(in_dim()));
  }
  Matrix y = matmul(x, weight_);
  for (std::size_t b = 0; b < y.rows(); ++b) {
    auto row = y.row(b);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias_[c];
  }
  cached_x_ = x;
  return y;
}

Matrix Linear::backward(const Matrix& dy, bool dense_grads) {
  if (paid_) return paid_->backward(dy);
  if (!cached_x_) throw StateError("Linear::backward called before forward");
  if (dense_grads) {
    add_into(grad_weight_, matmul_tn(*cached_x_, dy));
    for (std::size_t b = 0; b < dy.rows(); ++b) {
      auto row = dy.row(b);
      for (std::size_t c = 0; c < row.size(); ++c) grad_bias_[c] += row[c];
    }
  }
  return matmul_nt(dy, weight_);
}

std::vector<ParamView> Linear::dense_parameters(const std::string& prefix) {
  return {{prefix + ".weight", weight_.data(), grad_weight_.data()},
          {prefix + ".bias", bias_, grad_bias_}};
}

void Linear::zero_grad() {
  std::fill(grad_weight_.data().begin(), grad_weight_.data().end(), 0.0);
  std::fill(grad_bias_.begin(), grad_bias_.end(), 0.0);
  if (paid_) paid_->zero_grad();
}

Matrix LayerNorm::forward(const Matrix& x) {
  const std::size_t n = x.cols();
  xhat = Matrix(x.rows(), n);
  rstd.assign(x.rows(), 0.0);
  Matrix y(x.rows(), n);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd[r] = rs;
    auto xh = xhat.row(r);
    auto out = y.row(r);
    for (std::size_t c = 0; c < n; ++c) {
      xh[c] = (in[c] - mean) * rs;
      out[c] = gamma[c] * xh[c] + beta[c];
    }
  }
  return y;
}

Matrix LayerNorm::backward(const Matrix& dy, bool param_grads) {
  if (dy.rows() != xhat.rows()) throw StateError("LayerNorm::backward without matching forward");
  const std::size_t n = dy.cols();
  Matrix dx(dy.rows(), n);
  Vector dxhat(n);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    auto g = dy.row(r);
    auto xh = xhat.row(r);
    double mean_d = 0.0;
    double mean_dx = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      dxhat[c] = g[c] * gamma[c];
      mean_d += dxhat[c];
      mean_dx += dxhat[c] * xh[c];
      if (param_grads) {
        grad_gamma[c] += g[c] * xh[c];
        grad_beta[c] += g[c];
      }
    }
    mean_d /= static_cast<double>(n);
    mean_dx /= static_cast<double>(n);
    auto out = dx.row(r);
    for (std::size_t c = 0; c < n; ++c) out[c] = rstd[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
  }
  return dx;
}

// ---------------------------------------------------------------------------

Network Network::build(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Network net;
  net.cfg_ = cfg;
  const std::size_t d = cfg.dim;
  const std::size_t h = cfg.hidden_dim();
  const double s = cfg.init_std;
  if (cfg.kind == ModelKind::TinyTransformer) {
    net.embed_ = Linear(cfg.patch_dim(), d, s, rng);
    net.pos_ = rng_gaussian(rng, cfg.tokens, d, s > 0.0 ? s : 0.02);
    net.grad_pos_ = Matrix(cfg.tokens, d);
  } else {
    net.embed_ = Linear(cfg.input_dim, d, s, rng);
  }
  net.blocks_.resize(cfg.depth);
  for (Block& blk : net.blocks_) {
    if (cfg.kind == ModelKind::TinyTransformer) {
      blk.ln1 = LayerNorm(d);
      blk.ln2 = LayerNorm(d);
      for (LinearSlot slot : {LinearSlot::Q, LinearSlot::K, LinearSlot::V, LinearSlot::O})
        blk.slot(slot) = Linear(d, d, s, rng);
    }
    blk.slot(LinearSlot::M1) = Linear(d, h, s, rng);
    blk.slot(LinearSlot::M2) = Linear(h, d, s, rng);
  }
  if (cfg.kind == ModelKind::TinyTransformer) net.ln_final_ = LayerNorm(d);
  net.head_ = Linear(d, cfg.n_classes, s, rng);
  return net;
}

Matrix Network::embed_input(const Matrix& x) const {
  if (x.cols() != cfg_.input_dim) {
    throw ShapeError("Network: input width " + std::to_string(x.cols()) + " != input_dim " +
                     std::to_string(cfg_.input_dim));
  }
  if (cfg_.kind == ModelKind::Mlp) return x;
  // Row-major storage makes the (batch, tokens*patch) -> (batch*tokens, patch)
  // reshape a reinterpretation.
  std::vector<double> data(x.data().begin(), x.data().end());
  return Matrix(x.rows() * cfg_.tokens, cfg_.patch_dim(), std::move(data));
}

Matrix Network::attention_forward(Block& blk, const Matrix& a, std::size_t batch) {
  const std::size_t T = cfg_.tokens;
  const std::size_t H = cfg_.heads;
  const std::size_t dh = cfg_.dim / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  blk.q = blk.slot(LinearSlot::Q).forward(a);
  blk.k = blk.slot(LinearSlot::K).forward(a);
  blk.v = blk.slot(LinearSlot::V).forward(a);
  blk.attn_probs = Matrix(batch * H * T, T);
  Matrix ctx(batch * T, cfg_.dim);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t hd = 0; hd < H; ++hd) {
      const std::size_t off = hd * dh;
      for (std::size_t i = 0; i < T; ++i) {
        auto p = blk.attn_probs.row((b * H + hd) * T + i);
        auto qi = blk.q.row(b * T + i).subspan(off, dh);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < T; ++j) {
          auto kj = blk.k.row(b * T + j).subspan(off, dh);
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) s += qi[e] * kj[e];
          p[j] = s * scale;
          mx = std::max(mx, p[j]);
        }
        double z = 0.0;
        for (double& pj : p) {
          pj = std::exp(pj - mx);
          z += pj;
        }
        for (double& pj : p) pj /= z;
        auto out = ctx.row(b * T + i).subspan(off, dh);
        for (std::size_t j = 0; j < T; ++j) {
          auto vj = blk.v.row(b * T + j).subspan(off, dh);
          for (std::size_t e = 0; e < dh; ++e) out[e] += p[j] * vj[e];
        }
      }
    }
  }
  return ctx;
}

Matrix Network::attention_backward(Block& blk, const Matrix& d_ctx, std::size_t batch,
                                   bool dense) {
  const std::size_t T = cfg_.tokens;
  const std::size_t H = cfg_.heads;
  const std::size_t dh = cfg_.dim / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dq(batch * T, cfg_.dim), dk(batch * T, cfg_.dim), dv(batch * T, cfg_.dim);
  Vector dp(T), ds(T);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t hd = 0; hd < H; ++hd) {
      const std::size_t off = hd * dh;
      for (std::size_t i = 0; i < T; ++i) {
        auto p = blk.attn_probs.row((b * H + hd) * T + i);
        auto gi = d_ctx.row(b * T + i).subspan(off, dh);
        double pdp = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          auto vj = blk.v.row(b * T + j).subspan(off, dh);
          auto dvj = dv.row(b * T + j).subspan(off, dh);
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) {
            s += gi[e] * vj[e];
            dvj[e] += p[j] * gi[e];
          }
          dp[j] = s;
          pdp += p[j] * s;
        }
        for (std::size_t j = 0; j < T; ++j) ds[j] = p[j] * (dp[j] - pdp) * scale;
        auto qi = blk.q.row(b * T + i).subspan(off, dh);
        auto dqi = dq.row(b * T + i).subspan(off, dh);
        for (std::size_t j = 0; j < T; ++j) {
          auto kj = blk.k.row(b * T + j).subspan(off, dh);
          auto dkj = dk.row(b * T + j).subspan(off, dh);
          for (std::size_t e = 0; e < dh; ++e) {
            dqi[e] += ds[j] * kj[e];
            dkj[e] += ds[j] * qi[e];
          }
        }
      }
    }
  }
  Matrix da = blk.slot(LinearSlot::Q).backward(dq, dense);
  add_into(da, blk.slot(LinearSlot::K).backward(dk, dense));
  add_into(da, blk.slot(LinearSlot::V).backward(dv, dense));
  return da;
}

ForwardResult Network::forward(const Matrix& x) {
  const std::size_t batch = x.rows();
  const std::size_t T = cfg_.tokens;
  Matrix h = embed_.forward(embed_input(x));
  if (cfg_.kind == ModelKind::TinyTransformer) {
    for (std::size_t r = 0; r < h.rows(); ++r) {
      auto row = h.row(r);
      auto p = pos_.row(r % T);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += p[c];
    }
  }
  block_outputs_.assign(1, h);
  for (Block& blk : blocks_) {
    if (cfg_.kind == ModelKind::TinyTransformer) {
      const Matrix ctx = attention_forward(blk, blk.ln1.forward(h), batch);
      add_into(h, blk.slot(LinearSlot::O).forward(ctx));
      blk.mlp_pre = blk.slot(LinearSlot::M1).forward(blk.ln2.forward(h));
    } else {
      blk.mlp_pre = blk.slot(LinearSlot::M1).forward(h);
    }
    Matrix act = blk.mlp_pre;
    for (double& v : act.data()) v = gelu(v);
    add_into(h, blk.slot(LinearSlot::M2).forward(act));
    block_outputs_.push_back(h);
  }
  ForwardResult out;
  const bool tapped = cfg_.feature_block() != cfg_.depth;
  if (cfg_.kind == ModelKind::TinyTransformer) {
    const Matrix top = pool_tokens(ln_final_.forward(block_outputs_.back()), batch, T);
    if (tapped) {
      ln_tap_.gamma = ln_final_.gamma;
      ln_tap_.beta = ln_final_.beta;
      out.features = pool_tokens(ln_tap_.forward(block_outputs_[cfg_.feature_block()]), batch, T);
    } else {
      out.features = top;
    }
    out.logits = head_.forward(top);
  } else {
    out.features = pool_tokens(block_outputs_[cfg_.feature_block()], batch, T);
    out.logits = head_.forward(tapped ? pool_tokens(block_outputs_.back(), batch, T) : out.features);
  }
  cached_batch_ = batch;
  has_cache_ = true;
  return out;
}

void Network::backward(const Matrix* d_features, const Matrix* d_logits) {
  if (!has_cache_) throw StateError("Network::backward without a cached forward");
  const std::size_t batch = cached_batch_;
  const std::size_t T = cfg_.tokens;
  const bool dense = phase_ == Phase::Pretrain;
  if (d_features && (d_features->rows() != batch || d_features->cols() != cfg_.dim)) {
    throw StateError("Network::backward: feature gradient shape does not match forward");
  }
  if (d_logits && (d_logits->rows() != batch || d_logits->cols() != cfg_.n_classes)) {
    throw StateError("Network::backward: logit gradient shape does not match forward");
  }
  if (!d_features && !d_logits) return;

  const bool transformer = cfg_.kind == ModelKind::TinyTransformer;
  const std::size_t tap = cfg_.feature_block();
  const bool tapped = tap != cfg_.depth;
  // Gradients wrt the (normalized, for transformers) token outputs of the
  // last block and of the tap block.
  Matrix d_top(batch * T, cfg_.dim);
  std::size_t top = tap;
  if (d_logits) {
    unpool_into(d_top, head_.backward(*d_logits, dense), T);
    top = cfg_.depth;
  }
  if (d_features && !tapped) unpool_into(d_top, *d_features, T);
  Matrix dh(batch * T, cfg_.dim);
  if (top == cfg_.depth) dh = transformer ? ln_final_.backward(d_top, dense) : d_top;
  for (std::size_t i = top; i >= 1; --i) {
    if (i == tap && tapped && d_features) {
      Matrix d_tap(batch * T, cfg_.dim);
      unpool_into(d_tap, *d_features, T);
      if (transformer) {
        // The tap shares ln_final_'s parameters; route its share there.
        ln_tap_.grad_gamma.assign(cfg_.dim, 0.0);
        ln_tap_.grad_beta.assign(cfg_.dim, 0.0);
        add_into(dh, ln_tap_.backward(d_tap, dense));
        if (dense) {
          for (std::size_t c = 0; c < cfg_.dim; ++c) {
            ln_final_.grad_gamma[c] += ln_tap_.grad_gamma[c];
            ln_final_.grad_beta[c] += ln_tap_.grad_beta[c];
          }
        }
      } else {
        add_into(dh, d_tap);
      }
    }
    Block& blk = blocks_[i - 1];
    Matrix dact = blk.slot(LinearSlot::M2).backward(dh, dense);
    for (std::size_t n = 0; n < dact.size(); ++n) dact.data()[n] *= gelu_grad(blk.mlp_pre.data()[n]);
    Matrix dmlp_in = blk.slot(LinearSlot::M1).backward(dact, dense);
    if (cfg_.kind == ModelKind::TinyTransformer) {
      add_into(dh, blk.ln2.backward(dmlp_in, dense));
      const Matrix dctx = blk.slot(LinearSlot::O).backward(dh, dense);
      add_into(dh, blk.ln1.backward(attention_backward(blk, dctx, batch, dense), dense));
    } else {
      add_into(dh, dmlp_in);
    }
  }
  if (dense) {
    if (cfg_.kind == ModelKind::TinyTransformer) {
      for (std::size_t r = 0; r < dh.rows(); ++r) {
        auto src = dh.row(r);
        auto dst = grad_pos_.row(r % T);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
    }
    embed_.backward(dh, true);
  }
}

std::vector<ParamView> Network::parameters() {
  std::vector<ParamView> out;
  if (phase_ == Phase::Adapt) {
    for (auto& [name, layer] : linear_layers()) {
      if (PaidLinear* p = layer->paid()) {
        auto params = p->parameters(name);
        out.insert(out.end(), params.begin(), params.end());
      }
    }
    return out;
  }
  if (injected_) throw StateError("pretraining an injected network is not supported");
  auto append = [&out](std::vector<ParamView> v) { out.insert(out.end(), v.begin(), v.end()); };
  append(embed_.dense_parameters("embed"));
  if (cfg_.kind == ModelKind::TinyTransformer) out.push_back({"pos", pos_.data(), grad_pos_.data()});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& blk = blocks_[i];
    const std::string p = block_prefix(i);
    if (cfg_.kind == ModelKind::TinyTransformer) {
      out.push_back({p + ".ln1.gamma", blk.ln1.gamma, blk.ln1.grad_gamma});
      out.push_back({p + ".ln1.beta", blk.ln1.beta, blk.ln1.grad_beta});
      out.push_back({p + ".ln2.gamma", blk.ln2.gamma, blk.ln2.grad_gamma});
      out.push_back({p + ".ln2.beta", blk.ln2.beta, blk.ln2.grad_beta});
    }
    for (LinearSlot slot : kSlots) {
      if (blk.slot(slot).in_dim() == 0) continue;
      append(blk.slot(slot).dense_parameters(p + "." + std::string(to_string(slot))));
    }
  }
  if (cfg_.kind == ModelKind::TinyTransformer) {
    out.push_back({"ln_final.gamma", ln_final_.gamma, ln_final_.grad_gamma});
    out.push_back({"ln_final.beta", ln_final_.beta, ln_final_.grad_beta});
  }
  append(head_.dense_parameters("head"));
  return out;
}

void Network::project_constraints() noexcept {
  for (Block& blk : blocks_)
    for (Linear& l : blk.linear)
      if (PaidLinear* p = l.paid()) p->project_magnitude();
}

void Network::zero_grad() {
  embed_.zero_grad();
  std::fill(grad_pos_.data().begin(), grad_pos_.data().end(), 0.0);
  for (Block& blk : blocks_) {
    for (LayerNorm* ln : {&blk.ln1, &blk.ln2}) {
      std::fill(ln->grad_gamma.begin(), ln->grad_gamma.end(), 0.0);
      std::fill(ln->grad_beta.begin(), ln->grad_beta.end(), 0.0);
    }
    for (Linear& l : blk.linear) l.zero_grad();
  }
  std::fill(ln_final_.grad_gamma.begin(), ln_final_.grad_gamma.end(), 0.0);
  std::fill(ln_final_.grad_beta.begin(), ln_final_.grad_beta.end(), 0.0);
  head_.zero_grad();
}

std::size_t Network::parameter_count() const {
  std::size_t n = embed_.weight().size() + embed_.bias().size() + pos_.size();
  for (const Block& blk : blocks_) {
    n += blk.ln1.gamma.size() + blk.ln1.beta.size() + blk.ln2.gamma.size() + blk.ln2.beta.size();
    for (const Linear& l : blk.linear) n += l.weight().size() + l.bias().size();
  }
  n += ln_final_.gamma.size() + ln_final_.beta.size();
  return n + head_.weight().size() + head_.bias().size();
}

std::size_t Network::trainable_count() const {
  if (phase_ == Phase::Pretrain) return parameter_count();
  std::size_t n = 0;
  for (const auto& [name, layer] : linear_layers()) {
    if (const PaidLinear* p = layer->paid()) n += p->trainable_count();
  }
  return n;
}

void Network::inject_paid(const LayerSelector& selector, UpdateMode mode, std::size_t r, Rng& rng,
                          bool allow_non_identity) {
  if (selector.empty()) throw ConfigError("inject_paid: empty layer selector");
  if (injected_) throw StateError("inject_paid: network is already injected");
  std::size_t wrapped = 0;
  for (Block& blk : blocks_) {
    for (LinearSlot slot : kSlots) {
      Linear& l = blk.slot(slot);
      if (l.in_dim() == 0 || !selector.contains(slot)) continue;
      l.inject(mode, r, rng, allow_non_identity);
      ++wrapped;
    }
  }
  if (wrapped == 0) {
    throw ConfigError("inject_paid: selector '" + selector.to_string() +
                      "' matches no layer of this model");
  }
  injected_ = true;
  phase_ = Phase::Adapt;
  has_cache_ = false;
}

std::vector<std::pair<std::string, Linear*>> Network::linear_layers() {
  std::vector<std::pair<std::string, Linear*>> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    for (LinearSlot slot : kSlots) {
      Linear& l = blocks_[i].slot(slot);
      if (l.in_dim() == 0) continue;
      out.emplace_back(block_prefix(i) + "." + std::string(to_string(slot)), &l);
    }
  }
  return out;
}

std::vector<std::pair<std::string, const Linear*>> Network::linear_layers() const {
  std::vector<std::pair<std::string, const Linear*>> out;
  for (auto& [name, l] : const_cast<Network*>(this)->linear_layers()) out.emplace_back(name, l);
  return out;
}

std::vector<Network::Tensor> Network::export_tensors() const {
  std::vector<Tensor> out;
  auto matrix = [&out](std::string name, const Matrix& m) {
    out.push_back({std::move(name), {m.rows(), m.cols()},
                   std::vector<double>(m.data().begin(), m.data().end())});
  };
  auto vector = [&out](std::string name, const Vector& v) {
    out.push_back({std::move(name), {v.size()}, v});
  };
  matrix("embed.weight", embed_.weight());
  vector("embed.bias", embed_.bias());
  if (cfg_.kind == ModelKind::TinyTransformer) matrix("pos", pos_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& blk = blocks_[i];
    const std::string p = block_prefix(i);
    if (cfg_.kind == ModelKind::TinyTransformer) {
      vector(p + ".ln1.gamma", blk.ln1.gamma);
      vector(p + ".ln1.beta", blk.ln1.beta);
      vector(p + ".ln2.gamma", blk.ln2.gamma);
      vector(p + ".ln2.beta", blk.ln2.beta);
    }
    for (LinearSlot slot : kSlots) {
      const Linear& l = blk.slot(slot);
      if (l.in_dim() == 0) continue;
      const std::string name = p + "." + std::string(to_string(slot));
      matrix(name + ".weight", l.effective_weight());
      vector(name + ".bias", l.bias());
      if (const PaidLinear* pl = l.paid()) {
        vector(name + ".magnitude", pl->magnitude());
        matrix(name + ".direction", pl->direction());
        matrix(name + ".chain", pl->chain().params());
      }
    }
  }
  if (cfg_.kind == ModelKind::TinyTransformer) {
    vector("ln_final.gamma", ln_final_.gamma);
    vector("ln_final.beta", ln_final_.beta);
  }
  matrix("head.weight", head_.weight());
  vector("head.bias", head_.bias());
  return out;
}

void Network::import_tensors(const std::vector<Tensor>& tensors) {
  if (injected_) throw StateError("import_tensors into an injected network");
  auto find = [&tensors](const std::string& name) -> const Tensor& {
    for (const Tensor& t : tensors)
      if (t.name == name) return t;
    throw ShapeError("checkpoint is missing tensor '" + name + "'");
  };
  auto load_matrix = [&find](const std::string& name, Matrix& m) {
    const Tensor& t = find(name);
    if (t.shape != std::vector<std::size_t>{m.rows(), m.cols()}) {
      throw ShapeError("tensor '" + name + "' has the wrong shape");
    }
    std::copy(t.values.begin(), t.values.end(), m.data().begin());
  };
  auto load_vector = [&find](const std::string& name, Vector& v) {
    const Tensor& t = find(name);
    if (t.shape != std::vector<std::size_t>{v.size()}) {
      throw ShapeError("tensor '" + name + "' has the wrong shape");
    }
    v = t.values;
  };
  load_matrix("embed.weight", embed_.weight());
  load_vector("embed.bias", embed_.bias());
  if (cfg_.kind == ModelKind::TinyTransformer) load_matrix("pos", pos_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& blk = blocks_[i];
    const std::string p = block_prefix(i);
    if (cfg_.kind == ModelKind::TinyTransformer) {
      load_vector(p + ".ln1.gamma", blk.ln1.gamma);
      load_vector(p + ".ln1.beta", blk.ln1.beta);
      load_vector(p + ".ln2.gamma", blk.ln2.gamma);
      load_vector(p + ".ln2.beta", blk.ln2.beta);
    }
    for (LinearSlot slot : kSlots) {
      Linear& l = blk.slot(slot);
      if (l.in_dim() == 0) continue;
      const std::string name = p + "." + std::string(to_string(slot));
      load_matrix(name + ".weight", l.weight());
      load_vector(name + ".bias", l.bias());
    }
  }
  if (cfg_.kind == ModelKind::TinyTransformer) {
    load_vector("ln_final.gamma", ln_final_.gamma);
    load_vector("ln_final.beta", ln_final_.beta);
  }
  load_matrix("head.weight", head_.weight());
  load_vector("head.bias", head_.bias());
  has_cache_ = false;
}

CrossEntropy softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) throw ShapeError("cross entropy: label count mismatch");
  CrossEntropy out{0.0, Matrix(logits.rows(), logits.cols())};
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto z = logits.row(b);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    const auto y = static_cast<std::size_t>(labels[b]);
    if (labels[b] < 0 || y >= logits.cols()) throw ShapeError("cross entropy: label out of range");
    out.loss += (lse - z[y]) * inv_b;
    auto g = out.d_logits.row(b);
    for (std::size_t c = 0; c < z.size(); ++c) g[c] = std::exp(z[c] - lse) * inv_b;
    g[y] -= inv_b;
  }
  return out;
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto z = logits.row(b);
    out[b] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return out;
}

}  // namespace paid
