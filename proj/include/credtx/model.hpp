#pragma once

// Hybrid CNN + Transformer default-probability model.
//
// Per input row (n_features standardized values):
//   tokenize     -> [n_features, d_embed]   token_t = x_t * e_t + p_t
//   conv block   -> conv1d over the token sequence (d_embed = channels),
//                   activation, maxpool                      (cnn_only, hybrid)
//   encoder      -> optional input projection to d_model, then n_blocks of
//                   multi-head self-attention (+ residual/layer-norm and a
//                   position-wise feed-forward sublayer when enabled)
//                                                            (transformer_only, hybrid)
//   head         -> mean over the sequence, MLP, scalar logit, sigmoid
//
// The logistic variant is a single linear map of the raw row, used as a baseline.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "credtx/ops.hpp"
#include "credtx/tensor.hpp"

namespace credtx {

enum class ModelVariant { cnn_only, transformer_only, hybrid, logistic };

ModelVariant parse_variant(std::string_view name);
std::string_view variant_name(ModelVariant v);

struct ConvConfig {
  std::size_t channels = 32;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pool_window = 2;
  std::size_t pool_stride = 2;
};

struct AttentionConfig {
  std::size_t n_heads = 4;
  std::size_t d_model = 32;
  std::size_t n_blocks = 2;
  bool layer_norm = true;  // residual + layer norm + feed-forward sublayer
};

struct ModelConfig {
  ModelVariant variant = ModelVariant::hybrid;
  std::size_t d_embed = 16;
  ConvConfig conv;
  AttentionConfig attn;
  std::size_t ffn_dim = 64;
  std::vector<std::size_t> mlp_hidden{32};
  Activation activation = Activation::relu;
  double ln_eps = 1e-5;
  std::uint64_t seed = 0;

  bool uses_conv() const noexcept {
    return variant == ModelVariant::cnn_only || variant == ModelVariant::hybrid;
  }
  bool uses_transformer() const noexcept {
    return variant == ModelVariant::transformer_only || variant == ModelVariant::hybrid;
  }
  std::size_t d_head() const noexcept { return attn.d_model / attn.n_heads; }

  // Throws ConfigError / DimensionError when the config cannot be built for
  // rows of the given width.
  void validate(std::size_t n_features) const;
};

// Ordered, uniquely named parameters.
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor value);

  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  std::span<Parameter> params() noexcept { return params_; }
  std::span<const Parameter> params() const noexcept { return params_; }
  std::size_t size() const noexcept { return params_.size(); }
  // Total number of scalars.
  std::size_t scalar_count() const noexcept;

  void zero_grads() noexcept { credtx::zero_grads(params_); }
  bool operator==(const ParamStore& other) const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Building blocks (exposed for testing and reuse).

// token_t = x_t * embed_weight[t] + embed_bias[t]
Tensor tokenize(std::span<const double> row, const Tensor& embed_weight, const Tensor& embed_bias);

struct TokenizeGrads {
  Tensor weight;
  Tensor bias;
  std::vector<double> input;
};

TokenizeGrads tokenize_backward(std::span<const double> row, const Tensor& embed_weight,
                                const Tensor& grad_tokens);

struct AttentionCache {
  Tensor q;
  Tensor k;
  Tensor v;
  Tensor weights;  // softmax(q k^T * scale)
  double scale = 1.0;
};

struct AttentionResult {
  Tensor output;
  AttentionCache cache;
};

struct AttentionGrads {
  Tensor q;
  Tensor k;
  Tensor v;
};

// softmax(Q K^T / sqrt(d_k)) V
AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v);
AttentionGrads attention_backward(const AttentionCache& cache, const Tensor& grad_out);

struct MultiHeadWeights {
  const Tensor& wq;
  const Tensor& wk;
  const Tensor& wv;
  const Tensor& wo;
  std::size_t n_heads;
};

struct MultiHeadCache {
  Tensor input;
  Tensor concat;
  std::vector<AttentionCache> heads;
};

struct MultiHeadResult {
  Tensor output;
  MultiHeadCache cache;
};

struct MultiHeadGrads {
  Tensor input;
  Tensor wq;
  Tensor wk;
  Tensor wv;
  Tensor wo;
};

// Self-attention: Concat(head_1..head_h) W_o with head_i = Attention(x Wq_i, x Wk_i, x Wv_i),
// where Wq_i is the i-th block of d_model / h columns of Wq.
MultiHeadResult multi_head(const Tensor& tokens, const MultiHeadWeights& w);
MultiHeadGrads multi_head_backward(const MultiHeadCache& cache, const MultiHeadWeights& w,
                                   const Tensor& grad_out);

struct BlockWeights {
  MultiHeadWeights attn;
  // Present only when layer_norm is on.
  const Tensor* ln1_gain = nullptr;
  const Tensor* ln1_shift = nullptr;
  const Tensor* ffn_w1 = nullptr;
  const Tensor* ffn_b1 = nullptr;
  const Tensor* ffn_w2 = nullptr;
  const Tensor* ffn_b2 = nullptr;
  const Tensor* ln2_gain = nullptr;
  const Tensor* ln2_shift = nullptr;
  bool layer_norm = true;
  Activation activation = Activation::relu;
  double eps = 1e-5;
};

struct BlockCache {
  MultiHeadCache attn;
  LayerNormCache ln1;
  Tensor ffn_in;  // ln1 output
  ActivationCache ffn_act;
  Tensor ffn_hidden;
  LayerNormCache ln2;
};

struct BlockResult {
  Tensor output;
  BlockCache cache;
};

struct BlockGrads {
  Tensor input;
  MultiHeadGrads attn;
  LayerNormGrads ln1;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  LayerNormGrads ln2;
};

// With layer_norm: h = LN1(x + MHA(x)); out = LN2(h + FFN(h)). Without: out = MHA(x).
BlockResult transformer_block(const Tensor& x, const BlockWeights& w);
BlockGrads transformer_block_backward(const BlockCache& cache, const BlockWeights& w,
                                      const Tensor& grad_out);

// ---------------------------------------------------------------------------

// Xavier-uniform weights, zero biases/shifts, unit layer-norm gains.
ParamStore init_params(const ModelConfig& config, std::size_t n_features, std::uint64_t seed);

// Closed-form scalar count implied by the config.
std::size_t parameter_count(const ModelConfig& config, std::size_t n_features);

struct SampleTrace;

// Caches of one forward pass; backward may consume it exactly once.
class ForwardTrace {
 public:
  ForwardTrace();
  ~ForwardTrace();
  ForwardTrace(ForwardTrace&&) noexcept;
  ForwardTrace& operator=(ForwardTrace&&) noexcept;

  std::vector<double> probs;
  bool consumed = false;
  std::vector<SampleTrace> samples;
};

struct ForwardResult {
  Tensor probs;  // [B]
  ForwardTrace trace;
};

class CreditModel {
 public:
  CreditModel(ModelConfig config, std::size_t n_features);

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t n_features() const noexcept { return n_features_; }

  ForwardResult forward(const ParamStore& params, const Tensor& batch) const;
  // Probabilities only; no trace is kept.
  std::vector<double> predict(const ParamStore& params, const Tensor& batch) const;

  // Accumulates dL/dparam into params' grads given dL/dprob per row. When
  // `input_grads` is non-null it receives dL/dbatch [B, n_features].
  void backward(ParamStore& params, ForwardTrace& trace, std::span<const double> grad_probs,
                Tensor* input_grads = nullptr) const;

 private:
  struct Layout;
  Layout layout(const ParamStore& params) const;
  double forward_row(const ParamStore& params, const Layout& lay, std::span<const double> row,
                     SampleTrace* trace) const;

  ModelConfig config_;
  std::size_t n_features_;
};

}  // namespace credtx
