#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "igpn/record.hpp"

// Recorded operators. Each call appends one entry to the operands' record.
// Broadcasting is limited to the per-channel forms (channel_affine, channel_bias)
// and the shared left/right operand of batched_matmul; everything else needs
// matching shapes or an explicit expand.

namespace igpn {

/// (m,k) x (k,n) -> (m,n)
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

/// (b,m,k) x (b,k,n) -> (b,m,n). Either operand may instead be rank 2 and is
/// then shared across the batch.
template <typename T>
Var<T> batched_matmul(Var<T> a, Var<T> b);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);

template <typename T>
Var<T> tanh(Var<T> a);
template <typename T>
Var<T> sigmoid(Var<T> a);
template <typename T>
Var<T> relu(Var<T> a);

/// Softmax over the last axis.
template <typename T>
Var<T> softmax(Var<T> a);

/// Reductions drop the reduced axes. Passing every axis yields a scalar.
template <typename T>
Var<T> sum(Var<T> a, std::vector<std::size_t> axes);
template <typename T>
Var<T> mean(Var<T> a, std::vector<std::size_t> axes);
template <typename T>
Var<T> sum_all(Var<T> a);

/// x (B,Cin,T,N), weight (Cout,Cin,k) with k odd, zero padding (k-1)/2 on both
/// ends. Output frames ceil(T/stride).
template <typename T>
Var<T> temporal_conv(Var<T> x, Var<T> weight, std::size_t stride = 1);

/// x (B,C,T,N) -> (B,C,ceil(T/2),N); averages frames 2t and 2t+1, an unpaired
/// trailing frame is copied.
template <typename T>
Var<T> frame_pair_mean(Var<T> x);

/// Concatenates along axis 1; all other extents must agree.
template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);

template <typename T>
Var<T> reshape(Var<T> a, Shape shape);

/// Output axis i is input axis axes[i].
template <typename T>
Var<T> permute(Var<T> a, std::vector<std::size_t> axes);

/// Repeats a size-1 axis `count` times.
template <typename T>
Var<T> expand(Var<T> a, std::size_t axis, std::size_t count);

/// y = x * gamma[c] + beta[c] with c the axis-1 index.
template <typename T>
Var<T> channel_affine(Var<T> x, Var<T> gamma, Var<T> beta);

/// y = x + beta[c] with c the axis-1 index.
template <typename T>
Var<T> channel_bias(Var<T> x, Var<T> beta);

/// Per-channel standardization with statistics over every axis except 1:
/// (x - mean) / sqrt(biased_var + eps).
template <typename T>
Var<T> channel_standardize(Var<T> x, T eps);

/// Mean over the batch of -log softmax(logits)[label]. logits (B,K).
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::size_t> labels);

}  // namespace igpn
