// Differentiable tensor operations.
//
// Everything here is restricted to what the model needs: rank-1 and rank-2
// tensors, no implicit broadcasting except the explicit row-broadcast in
// add_row(). Rank-1 inputs of width n are treated as a single [1, n] row
// where an op works on rows.
#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "casr/tensor.hpp"

namespace casr {

enum class Activation { kSwish, kSigmoid, kTanh, kSoftplus, kRelu };

// Throws ConfigError for unknown names.
Activation activation_from_string(std::string_view name);
std::string_view activation_name(Activation kind);

// Boolean attention mask; allowed[r * cols + c] permits query r to see key c.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<bool> allowed;

  static AttentionMask causal(std::size_t t);
  static AttentionMask all(std::size_t rows, std::size_t cols);
  bool operator()(std::size_t r, std::size_t c) const {
    return allowed[r * cols + c];
  }
};

Tensor matmul(const Tensor& a, const Tensor& b);
// a[m,k] x b[n,k]^T -> [m,n]
Tensor matmul_transposed(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
// x[m,n] + row[n] for every row.
Tensor add_row(const Tensor& x, const Tensor& row);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);

Tensor activation(Activation kind, const Tensor& x);
inline Tensor swish(const Tensor& x) { return activation(Activation::kSwish, x); }
inline Tensor sigmoid(const Tensor& x) {
  return activation(Activation::kSigmoid, x);
}
inline Tensor tanh(const Tensor& x) { return activation(Activation::kTanh, x); }
inline Tensor softplus(const Tensor& x) {
  return activation(Activation::kSoftplus, x);
}
inline Tensor relu(const Tensor& x) { return activation(Activation::kRelu, x); }

// Numerically stable (max-subtracted) softmax. axis < 0 counts from the end.
Tensor softmax(const Tensor& x, int axis = -1);
// Row-wise log-softmax over the last axis.
Tensor log_softmax(const Tensor& x);

// Normalizes each position over the last axis with population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Per-channel 1-D convolution with zero "same" padding; kernel is [k, d], k odd.
Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel);

// Mean over the time axis: [t, d] -> [d].
Tensor mean_pool(const Tensor& x);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
// out[i] = table[index[i]]; also serves as row repetition.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index);
// Rows where mask[i] is set are replaced by `fill` ([d]).
Tensor where_rows(const Tensor& x, const std::vector<bool>& mask,
                  const Tensor& fill);
Tensor reshape(const Tensor& x, Shape shape);

// Learned relative-position bias for one attention head:
// out[i][j] = table[head][clamp(j - i, -clip, clip) + clip].
Tensor relative_bias(const Tensor& table, std::size_t head, std::size_t tq,
                     std::size_t tk, std::size_t clip);

// Disallowed entries become `value` (default -inf) and receive no gradient.
Tensor masked_fill(const Tensor& x, const AttentionMask& mask,
                   double value = -std::numeric_limits<double>::infinity());

}  // namespace casr
