#pragma once

#include <span>
#include <string>
#include <vector>

#include "dilvae/grad_check.hpp"
#include "dilvae/ops.hpp"

namespace dilvae {

/// Half-width of the uniform initializer for weights and embeddings.
inline constexpr double kInitScale = 0.05;

/// Affine map y = x W + b with W[in x out].
struct Linear {
    Tensor weight;
    Tensor bias;

    static Linear init(std::size_t in, std::size_t out, Rng& rng);
    std::size_t in_dim() const { return weight.dim(0); }
    std::size_t out_dim() const { return weight.dim(1); }
    void collect(const std::string& prefix, std::vector<NamedTensor>& out);
};

Var linear(Tape& tape, const Linear& layer, Var x);

/// Stack of affine layers with ReLU between consecutive layers (none after
/// the last).
struct Mlp {
    std::vector<Linear> layers;

    /// widths = {input, hidden..., output}; at least two entries.
    static Mlp init(std::span<const std::size_t> widths, Rng& rng);
    std::size_t in_dim() const { return layers.front().in_dim(); }
    std::size_t out_dim() const { return layers.back().out_dim(); }
    void collect(const std::string& prefix, std::vector<NamedTensor>& out);
};

Var mlp(Tape& tape, const Mlp& net, Var x);

/// Single-layer LSTM. Gate blocks inside the 4H axis are ordered
/// input, forget, cell, output.
struct LstmParams {
    Tensor w_x;   // [input x 4H]
    Tensor w_h;   // [H x 4H]
    Tensor bias;  // [4H], forget block starts at 1.0

    static LstmParams init(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);
    std::size_t input_dim() const { return w_x.dim(0); }
    std::size_t hidden_dim() const { return w_h.dim(0); }
    void collect(const std::string& prefix, std::vector<NamedTensor>& out);
};

struct LstmState {
    Var h;
    Var c;
};

LstmState lstm_zero_state(Tape& tape, const LstmParams& params, std::size_t batch);
LstmState lstm_step(Tape& tape, const LstmParams& params, Var x_t, LstmState state);

/// Runs the LSTM over inputs[B x T x d] and returns every hidden state
/// as [B x T x H].
Var lstm_unroll(Tape& tape, const LstmParams& params, Var inputs, LstmState initial);

/// Hidden state at each sequence's last real position; positions at or
/// beyond lengths[b] never touch row b.
Var lstm_encode(Tape& tape, const LstmParams& params, Var inputs, std::span<const std::size_t> lengths);

/// Bottleneck residual block: 1x1 (ext->int), ReLU, 1xk causal dilated
/// (int->int), ReLU, 1x1 (int->ext), then the skip connection.
struct ResidualBlockParams {
    Tensor w_in, b_in;    // [int x ext x 1], [int]
    Tensor w_mid, b_mid;  // [int x int x k], [int]
    Tensor w_out, b_out;  // [ext x int x 1], [ext]
    std::size_t dilation = 1;

    static ResidualBlockParams init(std::size_t channels_ext, std::size_t channels_int, std::size_t filter_size,
                                    std::size_t dilation, Rng& rng);
    std::size_t channels_ext() const { return w_in.dim(1); }
    std::size_t channels_int() const { return w_in.dim(0); }
    std::size_t filter_size() const { return w_mid.dim(2); }
    void collect(const std::string& prefix, std::vector<NamedTensor>& out);
};

Var residual_block(Tape& tape, const ResidualBlockParams& params, Var x);

/// Number of past positions (including the current one) a causal stack
/// with filter size k and the given dilations can see: (k-1)*sum(d) + 1.
std::size_t effective_receptive_field(std::size_t filter_size, std::span<const std::size_t> dilations);

/// Replaces each non-PAD token by UNK with probability `rate`.
std::vector<int> drop_word(std::span<const int> tokens, double rate, Rng& rng);

enum class DecoderKind { lstm, cnn };

std::string to_string(DecoderKind kind);
DecoderKind decoder_kind_from_string(const std::string& s);

/// Decoder architecture. Named CNN configurations fix the dilation
/// schedule; channel widths stay free so desk-scale runs can shrink them.
struct DecoderArch {
    DecoderKind kind = DecoderKind::cnn;
    std::size_t filter_size = 3;
    std::vector<std::size_t> dilations;
    std::size_t channels_ext = 32;
    std::size_t channels_int = 16;
    std::string name = "custom";

    /// SCNN, MCNN, LCNN, VLCNN or LSTM.
    static DecoderArch named(const std::string& name);
    static const std::vector<std::string>& cnn_names();

    std::size_t receptive_field() const { return effective_receptive_field(filter_size, dilations); }
    void validate() const;
};

} // namespace dilvae
