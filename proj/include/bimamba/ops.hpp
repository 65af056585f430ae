#pragma once

#include <cstddef>
#include <span>

#include "bimamba/tensor.hpp"

// Differentiable primitives. Every op records its backward rule on the tape
// when gradient tracking is active. Reductions accumulate in index order so
// results are reproducible bit for bit.
namespace bimamba::ops {

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor exp(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);

// [M,K] x [K,N], or [..., M, K] x [K, N] with the leading axes folded.
Tensor matmul(const Tensor& a, const Tensor& b);
// y = x W^T + b over the last axis of x. W is [out, in]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

// Cross-correlation. x is [C_in, L] or [B, C_in, L]; weight [C_out, C_in, k];
// bias [C_out] or undefined. Output length floor((L + 2p - k)/stride) + 1.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

// Per-channel causal convolution over time for x [B, T, E] with weight [E, k]
// and bias [E]; output t sees inputs t-k+1 .. t.
Tensor depthwise_causal_conv(const Tensor& x, const Tensor& weight, const Tensor& bias);

// x is [C, L] or [B, C, L]; windows that run past the end are dropped.
Tensor max_pool1d(const Tensor& x, std::size_t kernel, std::size_t stride);

// Inverted dropout: eval mode is the identity, train mode scales survivors by 1/(1-p).
Tensor dropout(const Tensor& x, double p, bool train, Rng& rng);

// Reverses `axis`. With per-batch `lengths` (axis 0 is batch), only the first
// lengths[b] entries of sample b are reversed and the tail stays in place.
Tensor reverse(const Tensor& x, std::size_t axis, std::span<const std::size_t> lengths = {});

// Mean over the batch of -log softmax(logits)[label]; logits [B, K].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace bimamba::ops
