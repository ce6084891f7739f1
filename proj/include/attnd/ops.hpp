#pragma once

#include <vector>

#include "attnd/tensor.hpp"

namespace attnd {
namespace ops {

// Differentiable primitives. Each op validates shapes, computes the forward
// value eagerly and records a backward rule on the result. All of them copy;
// none alias their inputs.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
// [m x n] + [n], the bias-add broadcast.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor reshape(const Tensor& a, std::vector<size_t> shape);
Tensor slice_rows(const Tensor& a, size_t r0, size_t r1);
Tensor slice_cols(const Tensor& a, size_t c0, size_t c1);
Tensor concat_rows(const Tensor& a, const Tensor& b);

Tensor sum_all(const Tensor& a);

/// Numerically stabilized softmax along `axis` (max subtraction; the
/// normalizer is summed in ascending value order, so a permutation of the
/// slice permutes the output bit-exactly).
Tensor softmax(const Tensor& x, size_t axis);
inline Tensor softmax_last(const Tensor& x) { return softmax(x, x.rank() - 1); }

/// Zero-mean unit-variance normalization of each length-d trailing slice,
/// then elementwise gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Row gather: out[t] = table[ids[t]]. Backward scatter-adds.
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

Tensor gelu(const Tensor& x);
Tensor tanh_t(const Tensor& x);

/// -log(max(p[index], 1e-12)) for a probability vector p.
Tensor cross_entropy_prob(const Tensor& p, size_t index);

/// Forward KL divergence sum_i p_i log((p_i+eps)/(q_i+eps)) over flattened
/// tensors of identical shape; eps = 1e-12, p_i = 0 terms contribute zero.
Tensor forward_kl(const Tensor& p, const Tensor& q);

/// Permutation-invariant sum: values are accumulated in ascending order.
double sorted_sum(std::vector<double> values);

constexpr double kLogEps = 1e-12;

}  // namespace ops
}  // namespace attnd
