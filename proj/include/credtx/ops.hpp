#pragma once

// Differentiable primitives with hand-written backward passes. Each forward
// returns its output together with a typed cache; the matching backward takes
// that cache, so a cache can only be fed to the backward of the op that made it.

#include <cstddef>
#include <string_view>
#include <vector>

#include "credtx/tensor.hpp"

namespace credtx {

// C[m,n] = A[m,k] B[k,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// C[m,n] = A[k,m]^T B[k,n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// C[m,n] = A[m,k] B[n,k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// dst += src (same shape)
void add_inplace(Tensor& dst, const Tensor& src);

// ---------------------------------------------------------------------------
// Linear map over rows: y[s,out] = x[s,in] W[in,out] (+ bias[out]).

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias);
// Accumulates into grad_weight / grad_bias (when non-null) and returns dx.
Tensor linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out,
                       Tensor& grad_weight, Tensor* grad_bias);

// ---------------------------------------------------------------------------
// conv1d: cross-correlation with valid padding.
//   out[o,i] = b[o] + sum_{c,t} x[c, i*stride + t] * w[o,c,t]

struct Conv1dCache {
  Tensor input;
  Tensor weight;
  std::size_t stride = 1;
};

struct Conv1dResult {
  Tensor output;
  Conv1dCache cache;
};

struct Conv1dGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride);
Conv1dResult conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride);
Conv1dGrads conv1d_backward(const Conv1dCache& cache, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// maxpool1d over the last axis of a [c, L] tensor. Ties go to the lowest index.

struct MaxPoolCache {
  Shape input_shape;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

struct MaxPoolResult {
  Tensor output;
  MaxPoolCache cache;
};

MaxPoolResult maxpool1d(const Tensor& x, std::size_t window, std::size_t stride);
Tensor maxpool1d_backward(const MaxPoolCache& cache, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Row-wise softmax with per-row max subtraction.

Tensor softmax_rows(const Tensor& x);
// Given y = softmax_rows(x) and dL/dy, returns dL/dx.
Tensor softmax_rows_backward(const Tensor& y, const Tensor& grad_out);

// ---------------------------------------------------------------------------

enum class Activation { relu, sigmoid, tanh };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation kind);

double sigmoid(double z) noexcept;

struct ActivationCache {
  Activation kind = Activation::relu;
  Tensor input;
  Tensor output;
};

struct ActivationResult {
  Tensor output;
  ActivationCache cache;
};

ActivationResult elementwise(Activation kind, const Tensor& x);
Tensor elementwise_backward(const ActivationCache& cache, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Layer normalization over the last axis of x[m,n].

struct LayerNormCache {
  Tensor normalized;             // (x - mean) / sqrt(var + eps)
  std::vector<double> inv_std;   // one per row
  Tensor gain;
};

struct LayerNormResult {
  Tensor output;
  LayerNormCache cache;
};

struct LayerNormGrads {
  Tensor input;
  Tensor gain;
  Tensor shift;
};

LayerNormResult layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps);
LayerNormGrads layer_norm_backward(const LayerNormCache& cache, const Tensor& grad_out);

}  // namespace credtx
