#pragma once

// Desk-scale networks with hand-written reverse passes.
//
// TinyTransformer: the flattened input is cut into `tokens` equal patches,
// embedded, given a learned positional table and passed through pre-norm
// encoder blocks
//
//   h <- h + o(MHA(q, k, v of LN1(h)))
//   h <- h + m2(GELU(m1(LN2(h))))
//
// Mlp: a single token; blocks are h <- h + m2(GELU(m1(h))).
//
// The transformer ends with a final LayerNorm applied per token. Features
// are the token mean of the normalized output of block `feature_depth`
// (the last block by default); the classifier head reads the token mean of
// the normalized last block.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "paid/numkit.hpp"
#include "paid/paidlayer.hpp"

namespace paid {

enum class ModelKind { Mlp, TinyTransformer };

std::string_view to_string(ModelKind kind) noexcept;
ModelKind parse_model_kind(std::string_view name);

struct ModelConfig {
  ModelKind kind = ModelKind::TinyTransformer;
  std::size_t dim = 32;
  std::size_t depth = 2;
  std::size_t heads = 4;
  double mlp_ratio = 2.0;
  std::size_t tokens = 8;
  std::size_t n_classes = 10;
  std::size_t input_dim = 64;
  // Block whose pooled output feeds the alignment loss; 0 means the last.
  std::size_t feature_depth = 0;
  double init_std = 0.02;

  std::size_t hidden_dim() const;
  std::size_t patch_dim() const;
  std::size_t feature_block() const { return feature_depth == 0 ? depth : feature_depth; }
  // Throws ConfigError.
  void validate() const;
};

// Closed-form count of every parameter in a freshly built network.
std::size_t expected_parameter_count(const ModelConfig& cfg);

enum class LinearSlot : std::size_t { Q = 0, K, V, O, M1, M2 };
inline constexpr std::size_t kSlotCount = 6;
std::string_view to_string(LinearSlot slot) noexcept;

// Subset of {q, k, v, o, m1, m2}. Parsed from strings like "qkvom" (where a
// bare "m" means both MLP layers) or "q,v,m1".
class LayerSelector {
 public:
  LayerSelector() = default;
  static LayerSelector all();
  static LayerSelector parse(std::string_view text);

  bool contains(LinearSlot slot) const { return bits_[static_cast<std::size_t>(slot)]; }
  void insert(LinearSlot slot) { bits_[static_cast<std::size_t>(slot)] = true; }
  bool empty() const;
  std::size_t count() const;
  // Canonical short form, e.g. "qkvom" or "qv".
  std::string to_string() const;

  friend bool operator==(const LayerSelector&, const LayerSelector&) = default;

 private:
  std::array<bool, kSlotCount> bits_{};
};

// Dense linear map that can be swapped for a PaidLinear by injection.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_dim, std::size_t out_dim, double init_std, Rng& rng);

  std::size_t in_dim() const noexcept { return weight_.rows(); }
  std::size_t out_dim() const noexcept { return weight_.cols(); }

  // Pre-trained (dense) parameters. Untouched by injection.
  Matrix& weight() noexcept { return weight_; }
  const Matrix& weight() const noexcept { return weight_; }
  Vector& bias() noexcept { return bias_; }
  const Vector& bias() const noexcept { return bias_; }

  bool injected() const noexcept { return paid_.has_value(); }
  PaidLinear* paid() noexcept { return paid_ ? &*paid_ : nullptr; }
  const PaidLinear* paid() const noexcept { return paid_ ? &*paid_ : nullptr; }
  void inject(UpdateMode mode, std::size_t r, Rng& rng, bool allow_non_identity);

  Matrix effective_weight() const;

  Matrix forward(const Matrix& x);
  // dense_grads: also produce weight/bias gradients of the dense layer.
  Matrix backward(const Matrix& dy, bool dense_grads);

  std::vector<ParamView> dense_parameters(const std::string& prefix);
  void zero_grad();

 private:
  Matrix weight_;
  Vector bias_;
  Matrix grad_weight_;
  Vector grad_bias_;
  std::optional<PaidLinear> paid_;
  std::optional<Matrix> cached_x_;
};

struct LayerNorm {
  Vector gamma;
  Vector beta;
  Vector grad_gamma;
  Vector grad_beta;
  // caches
  Matrix xhat;
  Vector rstd;

  explicit LayerNorm(std::size_t dim = 0)
      : gamma(dim, 1.0), beta(dim, 0.0), grad_gamma(dim, 0.0), grad_beta(dim, 0.0) {}

  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& dy, bool param_grads);
};

struct Block {
  LayerNorm ln1;
  LayerNorm ln2;
  std::array<Linear, kSlotCount> linear;

  Linear& slot(LinearSlot s) { return linear[static_cast<std::size_t>(s)]; }
  const Linear& slot(LinearSlot s) const { return linear[static_cast<std::size_t>(s)]; }

  // caches
  Matrix attn_probs;  // (batch*heads*tokens) x tokens
  Matrix q, k, v;
  Matrix mlp_pre;     // input to GELU
};

enum class Phase {
  Pretrain,  // every parameter learnable
  Adapt,     // only parameters exposed by injected PaidLinear layers
};

struct ForwardResult {
  Matrix features;  // batch x dim, pooled at cfg.feature_block()
  Matrix logits;    // batch x n_classes
};

class Network {
 public:
  Network() = default;

  static Network build(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const noexcept { return cfg_; }
  Phase phase() const noexcept { return phase_; }
  void set_phase(Phase phase) noexcept { phase_ = phase; }

  ForwardResult forward(const Matrix& x);
  Matrix forward_features(const Matrix& x) { return forward(x).features; }
  Matrix forward_logits(const Matrix& x) { return forward(x).logits; }

  // Reverse pass from the most recent forward. Either upstream may be
  // absent. Gradients land in the buffers exposed by parameters().
  // Throws StateError without a cached forward.
  void backward(const Matrix* d_features, const Matrix* d_logits);

  // Learnable parameters for the current phase, in a stable order.
  std::vector<ParamView> parameters();
  void zero_grad();
  std::size_t parameter_count() const;
  std::size_t trainable_count() const;

  // Wraps the selected linear layers of every block. Throws ConfigError on
  // an empty selector.
  void inject_paid(const LayerSelector& selector, UpdateMode mode, std::size_t r, Rng& rng,
                   bool allow_non_identity = false);
  bool injected() const noexcept { return injected_; }
  // Runs PaidLinear::project_magnitude on every injected layer.
  void project_constraints() noexcept;

  // Every block linear layer in stable order, with names like "block0.q".
  std::vector<std::pair<std::string, Linear*>> linear_layers();
  std::vector<std::pair<std::string, const Linear*>> linear_layers() const;

  // Named tensors for checkpointing. Vectors are rank-1, matrices rank-2.
  // Injected layers also export ".magnitude", ".direction" and ".chain"
  // and report their effective weight under ".weight".
  struct Tensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
  };
  std::vector<Tensor> export_tensors() const;
  // Loads the dense parameters of a freshly built network. Every dense
  // tensor must be present with the right shape; extra tensors are ignored.
  void import_tensors(const std::vector<Tensor>& tensors);

 private:
  Matrix embed_input(const Matrix& x) const;
  Matrix attention_forward(Block& blk, const Matrix& a, std::size_t batch);
  Matrix attention_backward(Block& blk, const Matrix& d_ctx, std::size_t batch, bool dense);

  ModelConfig cfg_;
  Phase phase_ = Phase::Pretrain;
  bool injected_ = false;

  Linear embed_;
  Matrix pos_;
  Matrix grad_pos_;
  std::vector<Block> blocks_;
  LayerNorm ln_final_;
  LayerNorm ln_tap_;  // ln_final_ parameters, separate cache for the feature tap
  Linear head_;

  // caches
  std::size_t cached_batch_ = 0;
  bool has_cache_ = false;
  std::vector<Matrix> block_outputs_;  // depth + 1 entries, [0] = embedding
};

// Mean softmax cross-entropy and its gradient wrt the logits.
struct CrossEntropy {
  double loss = 0.0;
  Matrix d_logits;
};
CrossEntropy softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

std::vector<int> argmax_rows(const Matrix& logits);

double gelu(double x);
double gelu_grad(double x);

}  // namespace paid
