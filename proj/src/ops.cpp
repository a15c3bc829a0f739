#include "credtx/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "credtx/errors.hpp"

namespace credtx {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
  }
}

[[noreturn]] void mismatch(const char* what, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(what) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) mismatch("matmul", a, b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* pc = c.ptr();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = pa[i * k + t];
      const double* brow = pb + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) mismatch("matmul_tn", a, b);
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* pc = c.ptr();
  for (std::size_t t = 0; t < k; ++t) {
    const double* arow = pa + t * m;
    const double* brow = pb + t * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) mismatch("matmul_nt", a, b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor c({m, n});
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* pc = c.ptr();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += arow[t] * brow[t];
      pc[i * n + j] = s;
    }
  }
  return c;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (dst.shape() != src.shape()) mismatch("add_inplace", dst, src);
  double* d = dst.ptr();
  const double* s = src.ptr();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

// ---------------------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  Tensor y = matmul(x, weight);
  if (bias) {
    const std::size_t n = y.dim(1);
    if (bias->size() != n) mismatch("linear bias", y, *bias);
    for (std::size_t i = 0; i < y.dim(0); ++i)
      for (std::size_t j = 0; j < n; ++j) y(i, j) += (*bias)[j];
  }
  return y;
}

Tensor linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out,
                       Tensor& grad_weight, Tensor* grad_bias) {
  add_inplace(grad_weight, matmul_tn(x, grad_out));
  if (grad_bias) {
    const std::size_t n = grad_out.dim(1);
    for (std::size_t i = 0; i < grad_out.dim(0); ++i)
      for (std::size_t j = 0; j < n; ++j) (*grad_bias)[j] += grad_out(i, j);
  }
  return matmul_nt(grad_out, weight);
}

// ---------------------------------------------------------------------------

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride) {
  if (stride < 1) throw ConfigError("conv1d stride must be >= 1");
  if (kernel < 1 || kernel > length) {
    throw DimensionError("conv1d kernel " + std::to_string(kernel) +
                         " does not fit sequence length " + std::to_string(length));
  }
  return (length - kernel) / stride + 1;
}

Conv1dResult conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride) {
  require_rank(x, 2, "conv1d input");
  require_rank(w, 3, "conv1d weight");
  const std::size_t c_in = x.dim(0), len = x.dim(1);
  const std::size_t c_out = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c_in) mismatch("conv1d channels", x, w);
  if (b.rank() != 1 || b.dim(0) != c_out) mismatch("conv1d bias", w, b);
  const std::size_t out_len = conv1d_output_length(len, k, stride);

  Tensor out({c_out, out_len});
  for (std::size_t o = 0; o < c_out; ++o) {
    for (std::size_t i = 0; i < out_len; ++i) {
      double s = b[o];
      for (std::size_t c = 0; c < c_in; ++c) {
        const double* xr = x.ptr() + c * len + i * stride;
        const double* wr = w.ptr() + (o * c_in + c) * k;
        for (std::size_t t = 0; t < k; ++t) s += xr[t] * wr[t];
      }
      out(o, i) = s;
    }
  }
  return {std::move(out), Conv1dCache{x, w, stride}};
}

Conv1dGrads conv1d_backward(const Conv1dCache& cache, const Tensor& grad_out) {
  const Tensor& x = cache.input;
  const Tensor& w = cache.weight;
  const std::size_t c_in = x.dim(0), len = x.dim(1);
  const std::size_t c_out = w.dim(0), k = w.dim(2);
  const std::size_t out_len = conv1d_output_length(len, k, cache.stride);
  if (grad_out.shape() != Shape{c_out, out_len}) mismatch("conv1d_backward", grad_out, w);

  Conv1dGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({c_out})};
  for (std::size_t o = 0; o < c_out; ++o) {
    for (std::size_t i = 0; i < out_len; ++i) {
      const double go = grad_out(o, i);
      g.bias[o] += go;
      for (std::size_t c = 0; c < c_in; ++c) {
        const std::size_t xoff = c * len + i * cache.stride;
        const std::size_t woff = (o * c_in + c) * k;
        for (std::size_t t = 0; t < k; ++t) {
          g.input[xoff + t] += go * w[woff + t];
          g.weight[woff + t] += go * x[xoff + t];
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

MaxPoolResult maxpool1d(const Tensor& x, std::size_t window, std::size_t stride) {
  require_rank(x, 2, "maxpool1d input");
  const std::size_t ch = x.dim(0), len = x.dim(1);
  if (window < 1 || window > len) {
    throw DimensionError("maxpool1d window " + std::to_string(window) +
                         " does not fit sequence length " + std::to_string(len));
  }
  if (stride < 1) throw ConfigError("maxpool1d stride must be >= 1");
  const std::size_t out_len = (len - window) / stride + 1;

  MaxPoolResult r{Tensor({ch, out_len}), MaxPoolCache{x.shape(), {}}};
  r.cache.argmax.resize(ch * out_len);
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t i = 0; i < out_len; ++i) {
      std::size_t best = c * len + i * stride;
      for (std::size_t t = 1; t < window; ++t) {
        const std::size_t idx = c * len + i * stride + t;
        if (x[idx] > x[best]) best = idx;  // strict: lowest index wins ties
      }
      r.output(c, i) = x[best];
      r.cache.argmax[c * out_len + i] = best;
    }
  }
  return r;
}

Tensor maxpool1d_backward(const MaxPoolCache& cache, const Tensor& grad_out) {
  if (grad_out.size() != cache.argmax.size()) {
    throw DimensionError("maxpool1d_backward: gradient shape " + shape_str(grad_out.shape()) +
                         " does not match the cached forward");
  }
  Tensor gx(cache.input_shape);
  for (std::size_t i = 0; i < cache.argmax.size(); ++i) gx[cache.argmax[i]] += grad_out[i];
  return gx;
}

// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = x.ptr() + i * n;
    double* yr = y.ptr() + i * n;
    const double mx = *std::max_element(xr, xr + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
  }
  return y;
}

Tensor softmax_rows_backward(const Tensor& y, const Tensor& grad_out) {
  if (y.shape() != grad_out.shape()) mismatch("softmax_rows_backward", y, grad_out);
  const std::size_t m = y.dim(0), n = y.dim(1);
  Tensor gx(y.shape());
  for (std::size_t i = 0; i < m; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += y(i, j) * grad_out(i, j);
    for (std::size_t j = 0; j < n; ++j) gx(i, j) = y(i, j) * (grad_out(i, j) - dot);
  }
  return gx;
}

// ---------------------------------------------------------------------------

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation kind) {
  switch (kind) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
  }
  return "unknown";
}

double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

ActivationResult elementwise(Activation kind, const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    switch (kind) {
      case Activation::relu: y[i] = x[i] < 0.0 ? 0.0 : x[i]; break;  // NaN passes through
      case Activation::sigmoid: y[i] = sigmoid(x[i]); break;
      case Activation::tanh: y[i] = std::tanh(x[i]); break;
    }
  }
  ActivationResult r{y, ActivationCache{kind, x, std::move(y)}};
  return r;
}

Tensor elementwise_backward(const ActivationCache& cache, const Tensor& grad_out) {
  if (grad_out.shape() != cache.input.shape()) {
    mismatch("elementwise_backward", cache.input, grad_out);
  }
  Tensor gx(grad_out.shape());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    const double y = cache.output[i];
    switch (cache.kind) {
      case Activation::relu: gx[i] = cache.input[i] > 0.0 ? grad_out[i] : 0.0; break;
      case Activation::sigmoid: gx[i] = grad_out[i] * y * (1.0 - y); break;
      case Activation::tanh: gx[i] = grad_out[i] * (1.0 - y * y); break;
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------

LayerNormResult layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gain.size() != n || shift.size() != n) mismatch("layer_norm affine", x, gain);
  if (!(eps > 0.0)) throw ConfigError("layer_norm eps must be positive");

  LayerNormResult r{Tensor(x.shape()), LayerNormCache{Tensor(x.shape()), std::vector<double>(m), gain}};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = x.ptr() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean *= inv_n;
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var *= inv_n;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    r.cache.inv_std[i] = inv_std;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (xr[j] - mean) * inv_std;
      r.cache.normalized(i, j) = xh;
      r.output(i, j) = xh * gain[j] + shift[j];
    }
  }
  return r;
}

LayerNormGrads layer_norm_backward(const LayerNormCache& cache, const Tensor& grad_out) {
  const Tensor& xh = cache.normalized;
  if (grad_out.shape() != xh.shape()) mismatch("layer_norm_backward", xh, grad_out);
  const std::size_t m = xh.dim(0), n = xh.dim(1);
  LayerNormGrads g{Tensor(xh.shape()), Tensor({n}), Tensor({n})};
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> dxh(n);
  for (std::size_t i = 0; i < m; ++i) {
    double sum_d = 0.0, sum_dx = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double go = grad_out(i, j);
      g.gain[j] += go * xh(i, j);
      g.shift[j] += go;
      dxh[j] = go * cache.gain[j];
      sum_d += dxh[j];
      sum_dx += dxh[j] * xh(i, j);
    }
    const double s = cache.inv_std[i] * inv_n;
    for (std::size_t j = 0; j < n; ++j) {
      g.input(i, j) = s * (static_cast<double>(n) * dxh[j] - sum_d - xh(i, j) * sum_dx);
    }
  }
  return g;
}

}  // namespace credtx
