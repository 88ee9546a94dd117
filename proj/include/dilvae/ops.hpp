#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dilvae/rng.hpp"
#include "dilvae/tape.hpp"

namespace dilvae {

// Elementwise, operands of identical shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double s);
Var add_scalar(Var x, double s);
Var square(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var x) { return scale(x, s); }

/// x[N x M] + bias[M], broadcast over rows.
Var add_bias(Var x, Var bias);
/// x[B x C x T] + bias[C], broadcast over batch and time.
Var add_channel_bias(Var x, Var bias);

Var matmul(Var a, Var b);

Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var exp(Var x);
Var log(Var x);

/// Concatenation along `axis`; all other dimensions must agree.
Var concat(std::span<const Var> parts, std::size_t axis);
inline Var concat(std::initializer_list<Var> parts, std::size_t axis) {
    return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}
/// Half-open range [begin, end) along `axis`.
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(Var x, Shape shape);
/// [B x X x Y] -> [B x Y x X].
Var swap_last_axes(Var x);

Var sum(Var x);
Var mean(Var x);
/// Reduces one axis away.
Var sum_axis(Var x, std::size_t axis);

/// Rows of table[V x d] picked by id -> [N x d]; backward scatter-adds.
Var embedding(Var table, std::span<const int> ids);

/// Inverted dropout: kept units are scaled by 1/(1-rate) during training,
/// identity at evaluation.
Var dropout(Var x, double rate, Rng& rng, bool training);

/// Causal dilated 1-D convolution.
///   x[B x Cin x T], w[Cout x Cin x K] -> [B x Cout x T]
///   y[b,o,t] = sum_{i,j} w[o,i,j] * x[b,i,t - (K-1-j)*dilation]
/// Taps before t=0 read zero, i.e. (K-1)*dilation slots of left padding.
Var conv1d_causal(Var x, Var w, std::size_t dilation);

/// Per-row -log softmax(logits)[target], zero on masked-out rows -> [N].
Var softmax_cross_entropy_rows(Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask);
/// Sum of the per-row losses -> scalar.
Var softmax_cross_entropy(Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask);

Var log_softmax(Var logits);
Var softmax(Var logits);

/// Row-wise select: out[b] = keep[b] ? a[b] : b[b] for [B x D] operands.
Var where_rows(std::span<const std::uint8_t> keep, Var a, Var b);
/// z[B x Z] -> [B x T x Z], repeating z at every time step.
Var broadcast_time(Var z, std::size_t steps);
/// x[B x T x D] -> [B x D] at step t.
Var select_time(Var x, std::size_t t);
/// T tensors of [B x D] -> [B x T x D].
Var stack_time(std::span<const Var> steps);

/// max(floor, x) for a scalar; gradient passes only where x > floor.
Var clamp_min(Var x, double floor);

/// Fused LSTM pointwise stage. gates[B x 4H] laid out (input, forget, cell,
/// output) pre-activation; c[B x H]. Returns [B x 2H] holding (h', c').
Var lstm_pointwise(Var gates, Var c);

} // namespace dilvae
