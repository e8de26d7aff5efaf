#pragma once

#include <span>
#include <vector>

#include "patchlab/numerics/tensor.hpp"

// Closed op set for the toy transformer. Every op records a backward rule on
// the active tape when one of its inputs requires a gradient. Reductions run
// in a fixed order so results are bit-reproducible.
namespace plab {

/// [.., m, k] x [k, n] -> [.., m, n]  (leading dims of `a` are flattened), or
/// [B.., m, k] x [B.., k, n] -> [B.., m, n] with identical batch dims.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double s);

enum class SoftmaxMask { None, Causal };

/// Softmax along `axis` (negative counts from the end). With Causal, `axis`
/// must be the last one, the last two dims form a square (query, key) grid
/// and keys after the query get probability exactly 0.
Tensor softmax(const Tensor& x, int axis = -1, SoftmaxMask mask = SoftmaxMask::None);

/// x / sqrt(mean(x^2) + eps) * weight over the last dim.
Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps);

/// Rows of `table` [V, d] gathered by token id -> [n, d].
Tensor embedding(const Tensor& table, std::span<const TokenId> tokens);

/// Rotary position embedding on [.., T, d_head]; adjacent element pairs
/// (2i, 2i+1) rotate by position * base^(-2i/d_head).
Tensor rotary(const Tensor& x, double base);

/// Mean negative log-softmax probability of `targets` under `logits` [n, V].
Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets);

Tensor reshape(const Tensor& x, Shape shape);
/// Swap two axes.
Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b);
/// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// Sum of all elements, composed as ones-row matmul.
Tensor sum(const Tensor& x);

/// log softmax(row)[index] by log-sum-exp; no tape.
double log_softmax_at(std::span<const double> row, std::size_t index);
std::size_t argmax(std::span<const double> row);

}  // namespace plab
