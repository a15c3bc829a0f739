#include "credtx/model.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "credtx/errors.hpp"

namespace credtx {

ModelVariant parse_variant(std::string_view name) {
  if (name == "hybrid") return ModelVariant::hybrid;
  if (name == "cnn_only") return ModelVariant::cnn_only;
  if (name == "transformer_only") return ModelVariant::transformer_only;
  if (name == "logistic") return ModelVariant::logistic;
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

std::string_view variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::cnn_only: return "cnn_only";
    case ModelVariant::transformer_only: return "transformer_only";
    case ModelVariant::hybrid: return "hybrid";
    case ModelVariant::logistic: return "logistic";
  }
  return "unknown";
}

namespace {

std::size_t conv_sequence_length(const ModelConfig& c, std::size_t n_features) {
  const std::size_t conv_len = conv1d_output_length(n_features, c.conv.kernel, c.conv.stride);
  if (c.conv.pool_window > conv_len) {
    throw DimensionError("pool window " + std::to_string(c.conv.pool_window) +
                         " exceeds conv output length " + std::to_string(conv_len));
  }
  return (conv_len - c.conv.pool_window) / c.conv.pool_stride + 1;
}

// Width of the sequence entering the encoder (or the head when there is none).
std::size_t encoder_input_width(const ModelConfig& c) {
  return c.uses_conv() ? c.conv.channels : c.d_embed;
}

bool needs_projection(const ModelConfig& c) {
  return c.uses_transformer() && encoder_input_width(c) != c.attn.d_model;
}

}  // namespace

void ModelConfig::validate(std::size_t n_features) const {
  if (n_features < 1) throw ConfigError("model needs at least one feature");
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
  for (auto w : mlp_hidden) {
    if (w < 1) throw ConfigError("mlp_hidden widths must be >= 1");
  }
  if (variant == ModelVariant::logistic) return;
  if (d_embed < 1) throw ConfigError("d_embed must be >= 1");
  if (uses_conv()) {
    if (conv.channels < 1 || conv.kernel < 1) throw ConfigError("conv channels/kernel must be >= 1");
    if (conv.stride < 1 || conv.pool_stride < 1 || conv.pool_window < 1) {
      throw ConfigError("conv stride and pool window/stride must be >= 1");
    }
    conv_sequence_length(*this, n_features);
  }
  if (uses_transformer()) {
    if (attn.n_heads < 1 || attn.d_model < 1 || attn.n_blocks < 1) {
      throw ConfigError("n_heads, d_model and n_blocks must be >= 1");
    }
    if (attn.d_model % attn.n_heads != 0) {
      throw ConfigError("d_model " + std::to_string(attn.d_model) + " is not divisible by n_heads " +
                        std::to_string(attn.n_heads));
    }
    if (attn.layer_norm && ffn_dim < 1) throw ConfigError("ffn_dim must be >= 1");
  }
}

// ---------------------------------------------------------------------------

Parameter& ParamStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  params_.emplace_back(std::move(name), std::move(value));
  return params_.back();
}

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw DimensionError("parameter '" + std::string(name) + "' not in store");
  return it->second;
}

Parameter& ParamStore::at(std::string_view name) { return params_[index_of(name)]; }
const Parameter& ParamStore::at(std::string_view name) const { return params_[index_of(name)]; }
bool ParamStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::size_t ParamStore::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name || params_[i].value != other.params_[i].value) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

Tensor tokenize(std::span<const double> row, const Tensor& embed_weight, const Tensor& embed_bias) {
  if (embed_weight.rank() != 2 || embed_weight.dim(0) != row.size() ||
      embed_bias.shape() != embed_weight.shape()) {
    throw DimensionError("tokenize: row of " + std::to_string(row.size()) +
                         " features vs embeddings " + shape_str(embed_weight.shape()));
  }
  const std::size_t f = row.size(), d = embed_weight.dim(1);
  Tensor tokens({f, d});
  for (std::size_t t = 0; t < f; ++t)
    for (std::size_t j = 0; j < d; ++j) tokens(t, j) = row[t] * embed_weight(t, j) + embed_bias(t, j);
  return tokens;
}

TokenizeGrads tokenize_backward(std::span<const double> row, const Tensor& embed_weight,
                                const Tensor& grad_tokens) {
  const std::size_t f = row.size(), d = embed_weight.dim(1);
  TokenizeGrads g{Tensor(embed_weight.shape()), grad_tokens, std::vector<double>(f, 0.0)};
  for (std::size_t t = 0; t < f; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      g.weight(t, j) = grad_tokens(t, j) * row[t];
      g.input[t] += grad_tokens(t, j) * embed_weight(t, j);
    }
  }
  return g;
}

AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.dim(0) != v.dim(0)) {
    throw DimensionError("attention: incompatible Q " + shape_str(q.shape()) + ", K " +
                         shape_str(k.shape()) + ", V " + shape_str(v.shape()));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor logits = matmul_nt(q, k);
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] *= scale;
  Tensor weights = softmax_rows(logits);
  Tensor out = matmul(weights, v);
  return {std::move(out), AttentionCache{q, k, v, std::move(weights), scale}};
}

AttentionGrads attention_backward(const AttentionCache& c, const Tensor& grad_out) {
  Tensor d_weights = matmul_nt(grad_out, c.v);
  Tensor dv = matmul_tn(c.weights, grad_out);
  Tensor d_logits = softmax_rows_backward(c.weights, d_weights);
  for (std::size_t i = 0; i < d_logits.size(); ++i) d_logits[i] *= c.scale;
  return {matmul(d_logits, c.k), matmul_tn(d_logits, c.q), std::move(dv)};
}

namespace {

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t width) {
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out({m, width});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < width; ++j) out(i, j) = x[i * n + begin + j];
  return out;
}

void put_cols(Tensor& dst, const Tensor& src, std::size_t begin) {
  const std::size_t m = src.dim(0), w = src.dim(1), n = dst.dim(1);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) dst[i * n + begin + j] = src(i, j);
}

}  // namespace

MultiHeadResult multi_head(const Tensor& tokens, const MultiHeadWeights& w) {
  if (tokens.rank() != 2) throw DimensionError("multi_head expects [seq, d_model] tokens");
  const std::size_t d = tokens.dim(1);
  if (w.n_heads < 1 || d % w.n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d) + " is not divisible by " +
                      std::to_string(w.n_heads) + " heads");
  }
  for (const Tensor* m : {&w.wq, &w.wk, &w.wv, &w.wo}) {
    if (m->shape() != Shape{d, d}) {
      throw DimensionError("multi_head projection " + shape_str(m->shape()) +
                           " does not match d_model " + std::to_string(d));
    }
  }
  const std::size_t dk = d / w.n_heads;
  const Tensor q = matmul(tokens, w.wq);
  const Tensor k = matmul(tokens, w.wk);
  const Tensor v = matmul(tokens, w.wv);

  MultiHeadCache cache{tokens, Tensor({tokens.dim(0), d}), {}};
  cache.heads.reserve(w.n_heads);
  for (std::size_t h = 0; h < w.n_heads; ++h) {
    auto head = attention(slice_cols(q, h * dk, dk), slice_cols(k, h * dk, dk),
                          slice_cols(v, h * dk, dk));
    put_cols(cache.concat, head.output, h * dk);
    cache.heads.push_back(std::move(head.cache));
  }
  Tensor out = matmul(cache.concat, w.wo);
  return {std::move(out), std::move(cache)};
}

MultiHeadGrads multi_head_backward(const MultiHeadCache& cache, const MultiHeadWeights& w,
                                   const Tensor& grad_out) {
  const std::size_t s = cache.input.dim(0), d = cache.input.dim(1);
  const std::size_t dk = d / w.n_heads;
  MultiHeadGrads g{Tensor(), Tensor(), Tensor(), Tensor(), matmul_tn(cache.concat, grad_out)};
  const Tensor d_concat = matmul_nt(grad_out, w.wo);
  Tensor dq({s, d}), dk_all({s, d}), dv({s, d});
  for (std::size_t h = 0; h < w.n_heads; ++h) {
    auto hg = attention_backward(cache.heads[h], slice_cols(d_concat, h * dk, dk));
    put_cols(dq, hg.q, h * dk);
    put_cols(dk_all, hg.k, h * dk);
    put_cols(dv, hg.v, h * dk);
  }
  g.wq = matmul_tn(cache.input, dq);
  g.wk = matmul_tn(cache.input, dk_all);
  g.wv = matmul_tn(cache.input, dv);
  g.input = matmul_nt(dq, w.wq);
  add_inplace(g.input, matmul_nt(dk_all, w.wk));
  add_inplace(g.input, matmul_nt(dv, w.wv));
  return g;
}

BlockResult transformer_block(const Tensor& x, const BlockWeights& w) {
  auto mh = multi_head(x, w.attn);
  BlockResult r;
  if (!w.layer_norm) {
    r.output = std::move(mh.output);
    r.cache.attn = std::move(mh.cache);
    return r;
  }
  Tensor r1 = x;
  add_inplace(r1, mh.output);
  auto ln1 = layer_norm(r1, *w.ln1_gain, *w.ln1_shift, w.eps);
  auto act = elementwise(w.activation, linear(ln1.output, *w.ffn_w1, w.ffn_b1));
  Tensor r2 = linear(act.output, *w.ffn_w2, w.ffn_b2);
  add_inplace(r2, ln1.output);
  auto ln2 = layer_norm(r2, *w.ln2_gain, *w.ln2_shift, w.eps);

  r.output = std::move(ln2.output);
  r.cache.attn = std::move(mh.cache);
  r.cache.ln1 = std::move(ln1.cache);
  r.cache.ffn_in = std::move(ln1.output);
  r.cache.ffn_hidden = act.output;
  r.cache.ffn_act = std::move(act.cache);
  r.cache.ln2 = std::move(ln2.cache);
  return r;
}

BlockGrads transformer_block_backward(const BlockCache& cache, const BlockWeights& w,
                                      const Tensor& grad_out) {
  BlockGrads g;
  if (!w.layer_norm) {
    g.attn = multi_head_backward(cache.attn, w.attn, grad_out);
    g.input = g.attn.input;
    return g;
  }
  g.ln2 = layer_norm_backward(cache.ln2, grad_out);
  const Tensor& d_r2 = g.ln2.input;
  g.ffn_w2 = Tensor(w.ffn_w2->shape());
  g.ffn_b2 = Tensor(w.ffn_b2->shape());
  Tensor d_hidden = linear_backward(cache.ffn_hidden, *w.ffn_w2, d_r2, g.ffn_w2, &g.ffn_b2);
  Tensor d_pre = elementwise_backward(cache.ffn_act, d_hidden);
  g.ffn_w1 = Tensor(w.ffn_w1->shape());
  g.ffn_b1 = Tensor(w.ffn_b1->shape());
  Tensor d_h = linear_backward(cache.ffn_in, *w.ffn_w1, d_pre, g.ffn_w1, &g.ffn_b1);
  add_inplace(d_h, d_r2);
  g.ln1 = layer_norm_backward(cache.ln1, d_h);
  g.attn = multi_head_backward(cache.attn, w.attn, g.ln1.input);
  g.input = g.ln1.input;
  add_inplace(g.input, g.attn.input);
  return g;
}

// ---------------------------------------------------------------------------

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor xavier(Shape shape, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng_);
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

std::string block_prefix(std::size_t b) { return "blocks." + std::to_string(b) + "."; }

}  // namespace

ParamStore init_params(const ModelConfig& c, std::size_t n_features, std::uint64_t seed) {
  c.validate(n_features);
  Initializer init(seed);
  ParamStore store;
  std::size_t width = 0;

  if (c.variant == ModelVariant::logistic) {
    store.add("head.weight", init.xavier({n_features, 1}, n_features, 1));
    store.add("head.bias", Tensor({1}));
    return store;
  }

  store.add("embed.weight", init.xavier({n_features, c.d_embed}, 1, c.d_embed));
  store.add("embed.bias", Tensor({n_features, c.d_embed}));
  width = c.d_embed;

  if (c.uses_conv()) {
    store.add("conv.weight", init.xavier({c.conv.channels, c.d_embed, c.conv.kernel},
                                         c.d_embed * c.conv.kernel, c.conv.channels * c.conv.kernel));
    store.add("conv.bias", Tensor({c.conv.channels}));
    width = c.conv.channels;
  }
  if (c.uses_transformer()) {
    const std::size_t d = c.attn.d_model;
    if (needs_projection(c)) {
      store.add("proj_in.weight", init.xavier({width, d}, width, d));
      store.add("proj_in.bias", Tensor({d}));
    }
    for (std::size_t b = 0; b < c.attn.n_blocks; ++b) {
      const std::string p = block_prefix(b);
      for (const char* m : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
        store.add(p + m, init.xavier({d, d}, d, d));
      }
      if (c.attn.layer_norm) {
        store.add(p + "ln1.gain", Tensor({d}, 1.0));
        store.add(p + "ln1.shift", Tensor({d}));
        store.add(p + "ffn.0.weight", init.xavier({d, c.ffn_dim}, d, c.ffn_dim));
        store.add(p + "ffn.0.bias", Tensor({c.ffn_dim}));
        store.add(p + "ffn.1.weight", init.xavier({c.ffn_dim, d}, c.ffn_dim, d));
        store.add(p + "ffn.1.bias", Tensor({d}));
        store.add(p + "ln2.gain", Tensor({d}, 1.0));
        store.add(p + "ln2.shift", Tensor({d}));
      }
    }
    width = d;
  }
  for (std::size_t i = 0; i < c.mlp_hidden.size(); ++i) {
    const std::size_t out = c.mlp_hidden[i];
    store.add("mlp." + std::to_string(i) + ".weight", init.xavier({width, out}, width, out));
    store.add("mlp." + std::to_string(i) + ".bias", Tensor({out}));
    width = out;
  }
  store.add("head.weight", init.xavier({width, 1}, width, 1));
  store.add("head.bias", Tensor({1}));
  return store;
}

std::size_t parameter_count(const ModelConfig& c, std::size_t n_features) {
  c.validate(n_features);
  if (c.variant == ModelVariant::logistic) return n_features + 1;
  std::size_t n = 2 * n_features * c.d_embed;
  std::size_t width = c.d_embed;
  if (c.uses_conv()) {
    n += c.conv.channels * c.d_embed * c.conv.kernel + c.conv.channels;
    width = c.conv.channels;
  }
  if (c.uses_transformer()) {
    const std::size_t d = c.attn.d_model;
    if (needs_projection(c)) n += width * d + d;
    std::size_t per_block = 4 * d * d;
    if (c.attn.layer_norm) per_block += 4 * d + d * c.ffn_dim + c.ffn_dim + c.ffn_dim * d + d;
    n += c.attn.n_blocks * per_block;
    width = d;
  }
  for (auto h : c.mlp_hidden) {
    n += width * h + h;
    width = h;
  }
  return n + width + 1;
}

// ---------------------------------------------------------------------------

struct SampleTrace {
  std::vector<double> row;
  Conv1dCache conv;
  ActivationCache conv_act;
  MaxPoolCache pool;
  Tensor proj_input;
  std::vector<BlockCache> blocks;
  std::size_t seq_len = 0;
  std::vector<Tensor> mlp_inputs;
  std::vector<ActivationCache> mlp_acts;
  Tensor head_input;
  double prob = 0.5;
};

ForwardTrace::ForwardTrace() = default;
ForwardTrace::~ForwardTrace() = default;
ForwardTrace::ForwardTrace(ForwardTrace&&) noexcept = default;
ForwardTrace& ForwardTrace::operator=(ForwardTrace&&) noexcept = default;

namespace {
constexpr std::size_t kAbsent = std::numeric_limits<std::size_t>::max();
}

struct CreditModel::Layout {
  struct Block {
    std::size_t wq, wk, wv, wo;
    std::size_t ln1_gain = kAbsent, ln1_shift = kAbsent, w1 = kAbsent, b1 = kAbsent;
    std::size_t w2 = kAbsent, b2 = kAbsent, ln2_gain = kAbsent, ln2_shift = kAbsent;
  };
  std::size_t embed_w = kAbsent, embed_b = kAbsent;
  std::size_t conv_w = kAbsent, conv_b = kAbsent;
  std::size_t proj_w = kAbsent, proj_b = kAbsent;
  std::vector<Block> blocks;
  std::vector<std::pair<std::size_t, std::size_t>> mlp;
  std::size_t head_w = kAbsent, head_b = kAbsent;
};

CreditModel::CreditModel(ModelConfig config, std::size_t n_features)
    : config_(std::move(config)), n_features_(n_features) {
  config_.validate(n_features_);
}

CreditModel::Layout CreditModel::layout(const ParamStore& ps) const {
  Layout lay;
  const auto& c = config_;
  auto expect = [&](const std::string& name, const Shape& shape) {
    const std::size_t i = ps.index_of(name);
    if (ps.params()[i].value.shape() != shape) {
      throw DimensionError("parameter '" + name + "' has shape " +
                           shape_str(ps.params()[i].value.shape()) + ", config implies " +
                           shape_str(shape));
    }
    return i;
  };
  if (ps.scalar_count() != parameter_count(c, n_features_)) {
    throw DimensionError("parameter store does not match the model config");
  }
  std::size_t width = 0;
  if (c.variant == ModelVariant::logistic) {
    lay.head_w = expect("head.weight", {n_features_, 1});
    lay.head_b = expect("head.bias", {1});
    return lay;
  }
  lay.embed_w = expect("embed.weight", {n_features_, c.d_embed});
  lay.embed_b = expect("embed.bias", {n_features_, c.d_embed});
  width = c.d_embed;
  if (c.uses_conv()) {
    lay.conv_w = expect("conv.weight", {c.conv.channels, c.d_embed, c.conv.kernel});
    lay.conv_b = expect("conv.bias", {c.conv.channels});
    width = c.conv.channels;
  }
  if (c.uses_transformer()) {
    const std::size_t d = c.attn.d_model;
    if (needs_projection(c)) {
      lay.proj_w = expect("proj_in.weight", {width, d});
      lay.proj_b = expect("proj_in.bias", {d});
    }
    for (std::size_t b = 0; b < c.attn.n_blocks; ++b) {
      const std::string p = block_prefix(b);
      Layout::Block blk{expect(p + "attn.wq", {d, d}), expect(p + "attn.wk", {d, d}),
                        expect(p + "attn.wv", {d, d}), expect(p + "attn.wo", {d, d})};
      if (c.attn.layer_norm) {
        blk.ln1_gain = expect(p + "ln1.gain", {d});
        blk.ln1_shift = expect(p + "ln1.shift", {d});
        blk.w1 = expect(p + "ffn.0.weight", {d, c.ffn_dim});
        blk.b1 = expect(p + "ffn.0.bias", {c.ffn_dim});
        blk.w2 = expect(p + "ffn.1.weight", {c.ffn_dim, d});
        blk.b2 = expect(p + "ffn.1.bias", {d});
        blk.ln2_gain = expect(p + "ln2.gain", {d});
        blk.ln2_shift = expect(p + "ln2.shift", {d});
      }
      lay.blocks.push_back(blk);
    }
    width = d;
  }
  for (std::size_t i = 0; i < c.mlp_hidden.size(); ++i) {
    const std::string p = "mlp." + std::to_string(i) + ".";
    lay.mlp.emplace_back(expect(p + "weight", {width, c.mlp_hidden[i]}),
                         expect(p + "bias", {c.mlp_hidden[i]}));
    width = c.mlp_hidden[i];
  }
  lay.head_w = expect("head.weight", {width, 1});
  lay.head_b = expect("head.bias", {1});
  return lay;
}

namespace {

const Tensor* value_or_null(const ParamStore& ps, std::size_t i) {
  return i == kAbsent ? nullptr : &ps.params()[i].value;
}

template <class Block>
BlockWeights make_block_weights(const ParamStore& ps, const Block& b, const ModelConfig& c) {
  const auto& p = ps.params();
  BlockWeights w{MultiHeadWeights{p[b.wq].value, p[b.wk].value, p[b.wv].value, p[b.wo].value,
                                  c.attn.n_heads}};
  w.ln1_gain = value_or_null(ps, b.ln1_gain);
  w.ln1_shift = value_or_null(ps, b.ln1_shift);
  w.ffn_w1 = value_or_null(ps, b.w1);
  w.ffn_b1 = value_or_null(ps, b.b1);
  w.ffn_w2 = value_or_null(ps, b.w2);
  w.ffn_b2 = value_or_null(ps, b.b2);
  w.ln2_gain = value_or_null(ps, b.ln2_gain);
  w.ln2_shift = value_or_null(ps, b.ln2_shift);
  w.layer_norm = c.attn.layer_norm;
  w.activation = c.activation;
  w.eps = c.ln_eps;
  return w;
}

Tensor mean_rows(const Tensor& seq) {
  const std::size_t s = seq.dim(0), w = seq.dim(1);
  Tensor out({1, w});
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < w; ++j) out[j] += seq(i, j);
  const double inv = 1.0 / static_cast<double>(s);
  for (std::size_t j = 0; j < w; ++j) out[j] *= inv;
  return out;
}
}  // namespace

double CreditModel::forward_row(const ParamStore& ps, const Layout& lay,
                                std::span<const double> row, SampleTrace* tr) const {
  const auto& c = config_;
  const auto& p = ps.params();
  auto val = [&](std::size_t i) -> const Tensor& { return p[i].value; };
  if (tr) tr->row.assign(row.begin(), row.end());

  double z = 0.0;
  if (c.variant == ModelVariant::logistic) {
    const Tensor& w = val(lay.head_w);
    z = val(lay.head_b)[0];
    for (std::size_t i = 0; i < row.size(); ++i) z += row[i] * w[i];
  } else {
    Tensor seq = tokenize(row, val(lay.embed_w), val(lay.embed_b));
    if (c.uses_conv()) {
      auto conv = conv1d(seq.transposed(), val(lay.conv_w), val(lay.conv_b), c.conv.stride);
      conv.output.require_finite("conv output");
      auto act = elementwise(c.activation, conv.output);
      auto pool = maxpool1d(act.output, c.conv.pool_window, c.conv.pool_stride);
      seq = pool.output.transposed();
      if (tr) {
        tr->conv = std::move(conv.cache);
        tr->conv_act = std::move(act.cache);
        tr->pool = std::move(pool.cache);
      }
    }
    if (c.uses_transformer()) {
      if (lay.proj_w != kAbsent) {
        if (tr) tr->proj_input = seq;
        seq = linear(seq, val(lay.proj_w), &val(lay.proj_b));
      }
      for (const auto& blk : lay.blocks) {
        auto r = transformer_block(seq, make_block_weights(ps, blk, c));
        r.output.require_finite("transformer block output");
        seq = std::move(r.output);
        if (tr) tr->blocks.push_back(std::move(r.cache));
      }
    }
    if (tr) tr->seq_len = seq.dim(0);
    Tensor h = mean_rows(seq);
    for (const auto& [wi, bi] : lay.mlp) {
      if (tr) tr->mlp_inputs.push_back(h);
      Tensor pre = linear(h, val(wi), &val(bi));
      pre.require_finite("mlp pre-activation");
      auto act = elementwise(c.activation, pre);
      h = std::move(act.output);
      if (tr) tr->mlp_acts.push_back(std::move(act.cache));
    }
    const Tensor out = linear(h, val(lay.head_w), &val(lay.head_b));
    z = out[0];
    if (tr) tr->head_input = std::move(h);
  }
  if (!std::isfinite(z)) throw NumericError("model produced a non-finite logit");
  const double prob = sigmoid(z);
  if (tr) tr->prob = prob;
  return prob;
}

ForwardResult CreditModel::forward(const ParamStore& params, const Tensor& batch) const {
  if (batch.rank() != 2 || batch.dim(1) != n_features_) {
    throw DimensionError("forward: batch " + shape_str(batch.shape()) + " vs " +
                         std::to_string(n_features_) + " features");
  }
  const Layout lay = layout(params);
  const std::size_t b = batch.dim(0);
  ForwardResult r{Tensor({b}), ForwardTrace()};
  r.trace.samples.resize(b);
  r.trace.probs.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double p = forward_row(params, lay, std::span<const double>(batch.ptr() + i * n_features_, n_features_),
                                 &r.trace.samples[i]);
    r.probs[i] = p;
    r.trace.probs[i] = p;
  }
  return r;
}

std::vector<double> CreditModel::predict(const ParamStore& params, const Tensor& batch) const {
  if (batch.rank() != 2 || batch.dim(1) != n_features_) {
    throw DimensionError("predict: batch " + shape_str(batch.shape()) + " vs " +
                         std::to_string(n_features_) + " features");
  }
  const Layout lay = layout(params);
  std::vector<double> probs(batch.dim(0));
  for (std::size_t i = 0; i < probs.size(); ++i) {
    probs[i] = forward_row(params, lay, std::span<const double>(batch.ptr() + i * n_features_, n_features_),
                           nullptr);
  }
  return probs;
}

void CreditModel::backward(ParamStore& params, ForwardTrace& trace,
                           std::span<const double> grad_probs, Tensor* input_grads) const {
  if (trace.consumed) throw StateError("forward trace already consumed by a backward pass");
  if (grad_probs.size() != trace.samples.size()) {
    throw DimensionError("backward: " + std::to_string(grad_probs.size()) +
                         " gradients for a batch of " + std::to_string(trace.samples.size()));
  }
  trace.consumed = true;
  const Layout lay = layout(params);
  const auto& c = config_;
  auto p = params.params();
  auto val = [&](std::size_t i) -> const Tensor& { return p[i].value; };
  auto grad = [&](std::size_t i) -> Tensor& { return p[i].grad; };
  if (input_grads) *input_grads = Tensor({trace.samples.size(), n_features_});

  for (std::size_t s = 0; s < trace.samples.size(); ++s) {
    const SampleTrace& tr = trace.samples[s];
    const double dz = grad_probs[s] * tr.prob * (1.0 - tr.prob);
    if (dz == 0.0) continue;

    if (c.variant == ModelVariant::logistic) {
      Tensor& gw = grad(lay.head_w);
      for (std::size_t i = 0; i < n_features_; ++i) {
        gw[i] += dz * tr.row[i];
        if (input_grads) (*input_grads)(s, i) = dz * val(lay.head_w)[i];
      }
      grad(lay.head_b)[0] += dz;
      continue;
    }

    Tensor g = linear_backward(tr.head_input, val(lay.head_w), Tensor({1, 1}, {dz}),
                               grad(lay.head_w), &grad(lay.head_b));
    for (std::size_t i = lay.mlp.size(); i-- > 0;) {
      const auto [wi, bi] = lay.mlp[i];
      g = elementwise_backward(tr.mlp_acts[i], g);
      g = linear_backward(tr.mlp_inputs[i], val(wi), g, grad(wi), &grad(bi));
    }
    // Mean over the sequence spreads the gradient evenly across positions.
    const std::size_t width = g.dim(1);
    Tensor g_seq({tr.seq_len, width});
    const double inv = 1.0 / static_cast<double>(tr.seq_len);
    for (std::size_t i = 0; i < tr.seq_len; ++i)
      for (std::size_t j = 0; j < width; ++j) g_seq(i, j) = g[j] * inv;

    if (c.uses_transformer()) {
      for (std::size_t b = lay.blocks.size(); b-- > 0;) {
        const auto& blk = lay.blocks[b];
        auto bg = transformer_block_backward(tr.blocks[b], make_block_weights(params, blk, c), g_seq);
        add_inplace(grad(blk.wq), bg.attn.wq);
        add_inplace(grad(blk.wk), bg.attn.wk);
        add_inplace(grad(blk.wv), bg.attn.wv);
        add_inplace(grad(blk.wo), bg.attn.wo);
        if (c.attn.layer_norm) {
          add_inplace(grad(blk.ln1_gain), bg.ln1.gain);
          add_inplace(grad(blk.ln1_shift), bg.ln1.shift);
          add_inplace(grad(blk.w1), bg.ffn_w1);
          add_inplace(grad(blk.b1), bg.ffn_b1);
          add_inplace(grad(blk.w2), bg.ffn_w2);
          add_inplace(grad(blk.b2), bg.ffn_b2);
          add_inplace(grad(blk.ln2_gain), bg.ln2.gain);
          add_inplace(grad(blk.ln2_shift), bg.ln2.shift);
        }
        g_seq = std::move(bg.input);
      }
      if (lay.proj_w != kAbsent) {
        g_seq = linear_backward(tr.proj_input, val(lay.proj_w), g_seq, grad(lay.proj_w),
                                &grad(lay.proj_b));
      }
    }
    Tensor g_tokens;
    if (c.uses_conv()) {
      Tensor g_act = maxpool1d_backward(tr.pool, g_seq.transposed());
      Tensor g_conv = elementwise_backward(tr.conv_act, g_act);
      auto cg = conv1d_backward(tr.conv, g_conv);
      add_inplace(grad(lay.conv_w), cg.weight);
      add_inplace(grad(lay.conv_b), cg.bias);
      g_tokens = cg.input.transposed();
    } else {
      g_tokens = std::move(g_seq);
    }
    auto tg = tokenize_backward(tr.row, val(lay.embed_w), g_tokens);
    add_inplace(grad(lay.embed_w), tg.weight);
    add_inplace(grad(lay.embed_b), tg.bias);
    if (input_grads) {
      for (std::size_t i = 0; i < n_features_; ++i) (*input_grads)(s, i) = tg.input[i];
    }
  }
}

}  // namespace credtx
