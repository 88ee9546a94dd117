#include "dilvae/layers.hpp"

#include <algorithm>
#include <numeric>

#include "dilvae/errors.hpp"
#include "dilvae/tokens.hpp"

namespace dilvae {

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
    return Linear{Tensor::uniform({in, out}, -kInitScale, kInitScale, rng), Tensor({out})};
}

void Linear::collect(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
}

Var linear(Tape& tape, const Linear& layer, Var x) {
    if (x.value().rank() != 2 || x.dim(1) != layer.in_dim())
        throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(layer.weight.shape()));
    return add_bias(matmul(x, tape.param(layer.weight)), tape.param(layer.bias));
}

Mlp Mlp::init(std::span<const std::size_t> widths, Rng& rng) {
    if (widths.size() < 2) throw ConfigError("mlp needs at least an input and an output width");
    Mlp net;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) net.layers.push_back(Linear::init(widths[i], widths[i + 1], rng));
    return net;
}

void Mlp::collect(const std::string& prefix, std::vector<NamedTensor>& out) {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + "." + std::to_string(i), out);
}

Var mlp(Tape& tape, const Mlp& net, Var x) {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        x = linear(tape, net.layers[i], x);
        if (i + 1 < net.layers.size()) x = relu(x);
    }
    return x;
}

LstmParams LstmParams::init(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
    LstmParams p{Tensor::uniform({input_dim, 4 * hidden_dim}, -kInitScale, kInitScale, rng),
                 Tensor::uniform({hidden_dim, 4 * hidden_dim}, -kInitScale, kInitScale, rng),
                 Tensor({4 * hidden_dim})};
    for (std::size_t k = hidden_dim; k < 2 * hidden_dim; ++k) p.bias[k] = 1.0;
    return p;
}

void LstmParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".w_x", &w_x});
    out.push_back({prefix + ".w_h", &w_h});
    out.push_back({prefix + ".bias", &bias});
}

LstmState lstm_zero_state(Tape& tape, const LstmParams& params, std::size_t batch) {
    return {tape.constant(Tensor({batch, params.hidden_dim()})), tape.constant(Tensor({batch, params.hidden_dim()}))};
}

namespace {

LstmState lstm_cell(Tape& tape, const LstmParams& params, Var input_gates, LstmState state) {
    const std::size_t h = params.hidden_dim();
    if (state.h.value().rank() != 2 || state.h.dim(1) != h || state.c.shape() != state.h.shape() ||
        state.h.dim(0) != input_gates.dim(0))
        throw DimensionError("lstm: state " + shape_str(state.h.shape()) + " does not fit hidden size " +
                             std::to_string(h));
    Var gates = add_bias(add(input_gates, matmul(state.h, tape.param(params.w_h))), tape.param(params.bias));
    Var packed = lstm_pointwise(gates, state.c);
    return {slice(packed, 1, 0, h), slice(packed, 1, h, 2 * h)};
}

} // namespace

LstmState lstm_step(Tape& tape, const LstmParams& params, Var x_t, LstmState state) {
    if (x_t.value().rank() != 2 || x_t.dim(1) != params.input_dim())
        throw DimensionError("lstm_step: input " + shape_str(x_t.shape()) + " vs input size " +
                             std::to_string(params.input_dim()));
    return lstm_cell(tape, params, matmul(x_t, tape.param(params.w_x)), state);
}

namespace {

/// inputs[B x T x d] -> per-step input contributions [B x T x 4H].
Var project_inputs(Tape& tape, const LstmParams& params, Var inputs) {
    if (inputs.value().rank() != 3 || inputs.dim(2) != params.input_dim())
        throw DimensionError("lstm: inputs " + shape_str(inputs.shape()) + " vs input size " +
                             std::to_string(params.input_dim()));
    const std::size_t nb = inputs.dim(0), nt = inputs.dim(1);
    Var flat = reshape(inputs, {nb * nt, params.input_dim()});
    return reshape(matmul(flat, tape.param(params.w_x)), {nb, nt, 4 * params.hidden_dim()});
}

} // namespace

Var lstm_unroll(Tape& tape, const LstmParams& params, Var inputs, LstmState initial) {
    Var proj = project_inputs(tape, params, inputs);
    std::vector<Var> hs;
    LstmState state = initial;
    for (std::size_t t = 0; t < inputs.dim(1); ++t) {
        state = lstm_cell(tape, params, select_time(proj, t), state);
        hs.push_back(state.h);
    }
    return stack_time(hs);
}

Var lstm_encode(Tape& tape, const LstmParams& params, Var inputs, std::span<const std::size_t> lengths) {
    const std::size_t nb = inputs.dim(0), nt = inputs.dim(1);
    if (lengths.size() != nb) throw DimensionError("lstm_encode: lengths do not match batch size");
    for (std::size_t len : lengths) {
        if (len == 0) throw InputError("lstm_encode: zero-length sequence");
        if (len > nt) throw DimensionError("lstm_encode: length exceeds padded width");
    }
    const std::size_t steps = *std::max_element(lengths.begin(), lengths.end());
    Var proj = project_inputs(tape, params, inputs);
    LstmState state = lstm_zero_state(tape, params, nb);
    std::vector<std::uint8_t> active(nb);
    for (std::size_t t = 0; t < steps; ++t) {
        LstmState next = lstm_cell(tape, params, select_time(proj, t), state);
        bool all = true;
        for (std::size_t b = 0; b < nb; ++b) {
            active[b] = t < lengths[b];
            all = all && active[b];
        }
        if (all) {
            state = next;
        } else {
            state = {where_rows(active, next.h, state.h), where_rows(active, next.c, state.c)};
        }
    }
    return state.h;
}

ResidualBlockParams ResidualBlockParams::init(std::size_t channels_ext, std::size_t channels_int,
                                              std::size_t filter_size, std::size_t dilation, Rng& rng) {
    if (filter_size < 1 || dilation < 1) throw ConfigError("residual block needs filter size and dilation >= 1");
    ResidualBlockParams p;
    p.w_in = Tensor::uniform({channels_int, channels_ext, 1}, -kInitScale, kInitScale, rng);
    p.b_in = Tensor({channels_int});
    p.w_mid = Tensor::uniform({channels_int, channels_int, filter_size}, -kInitScale, kInitScale, rng);
    p.b_mid = Tensor({channels_int});
    p.w_out = Tensor::uniform({channels_ext, channels_int, 1}, -kInitScale, kInitScale, rng);
    p.b_out = Tensor({channels_ext});
    p.dilation = dilation;
    return p;
}

void ResidualBlockParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".w_in", &w_in});
    out.push_back({prefix + ".b_in", &b_in});
    out.push_back({prefix + ".w_mid", &w_mid});
    out.push_back({prefix + ".b_mid", &b_mid});
    out.push_back({prefix + ".w_out", &w_out});
    out.push_back({prefix + ".b_out", &b_out});
}

Var residual_block(Tape& tape, const ResidualBlockParams& p, Var x) {
    if (x.value().rank() != 3 || x.dim(1) != p.channels_ext())
        throw DimensionError("residual_block: input " + shape_str(x.shape()) + " but block expects " +
                             std::to_string(p.channels_ext()) + " channels");
    Var h = relu(add_channel_bias(conv1d_causal(x, tape.param(p.w_in), 1), tape.param(p.b_in)));
    h = relu(add_channel_bias(conv1d_causal(h, tape.param(p.w_mid), p.dilation), tape.param(p.b_mid)));
    h = add_channel_bias(conv1d_causal(h, tape.param(p.w_out), 1), tape.param(p.b_out));
    return add(x, h);
}

std::size_t effective_receptive_field(std::size_t filter_size, std::span<const std::size_t> dilations) {
    if (filter_size < 1) throw ParameterError("filter size must be at least 1");
    std::size_t total = 0;
    for (std::size_t d : dilations) {
        if (d < 1) throw ParameterError("dilations must be at least 1");
        total += d;
    }
    return (filter_size - 1) * total + 1;
}

std::vector<int> drop_word(std::span<const int> tokens, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ParameterError("drop-word rate must be in [0, 1)");
    std::vector<int> out(tokens.begin(), tokens.end());
    if (rate == 0.0) return out;
    for (int& tok : out)
        if (tok != kPad && rng.bernoulli(rate)) tok = kUnk;
    return out;
}

std::string to_string(DecoderKind kind) { return kind == DecoderKind::lstm ? "lstm" : "cnn"; }

DecoderKind decoder_kind_from_string(const std::string& s) {
    if (s == "lstm") return DecoderKind::lstm;
    if (s == "cnn") return DecoderKind::cnn;
    throw ConfigError("unknown decoder kind '" + s + "'");
}

const std::vector<std::string>& DecoderArch::cnn_names() {
    static const std::vector<std::string> names{"SCNN", "MCNN", "LCNN", "VLCNN"};
    return names;
}

DecoderArch DecoderArch::named(const std::string& name) {
    DecoderArch arch;
    arch.name = name;
    const std::vector<std::size_t> block{1, 2, 4, 8, 16};
    if (name == "SCNN") {
        arch.dilations = {1, 2, 4};
    } else if (name == "MCNN") {
        arch.dilations = block;
    } else if (name == "LCNN" || name == "VLCNN") {
        const int repeats = name == "LCNN" ? 2 : 3;
        for (int r = 0; r < repeats; ++r) arch.dilations.insert(arch.dilations.end(), block.begin(), block.end());
    } else if (name == "LSTM") {
        arch.kind = DecoderKind::lstm;
    } else {
        throw ConfigError("unknown decoder configuration '" + name + "'");
    }
    return arch;
}

void DecoderArch::validate() const {
    if (kind == DecoderKind::lstm) return;
    if (filter_size < 1) throw ConfigError("filter size must be at least 1");
    if (channels_ext == 0 || channels_int == 0) throw ConfigError("channel widths must be positive");
    for (std::size_t d : dilations)
        if (d < 1) throw ConfigError("dilations must be at least 1");
}

} // namespace dilvae
