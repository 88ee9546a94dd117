#include "dilvae/probe.hpp"

#include <cmath>

#include "dilvae/errors.hpp"

namespace dilvae {

namespace {

// |d y[:, t] / d x[:, s]| summed over channels, for every s, over a few
// random inputs so that no gradient vanishes by accident.
std::vector<double> sensitivity(const std::vector<ResidualBlockParams>& blocks, std::size_t channels,
                                std::size_t steps, std::size_t t, Rng& rng) {
    std::vector<double> out(steps, 0.0);
    for (int draw = 0; draw < 3; ++draw) {
        Tape tape;
        Var x = tape.leaf(Tensor::uniform({1, channels, steps}, -1.0, 1.0, rng));
        Var h = x;
        for (const auto& b : blocks) h = residual_block(tape, b, h);
        Tensor seed(h.shape());
        for (std::size_t c = 0; c < channels; ++c) seed.at(0, c, t) = rng.uniform(0.5, 1.5);
        tape.backward(h, seed);
        const Tensor& g = tape.grad(x);
        for (std::size_t s = 0; s < steps; ++s)
            for (std::size_t c = 0; c < channels; ++c) out[s] += std::abs(g.at(0, c, s));
    }
    return out;
}

} // namespace

std::vector<bool> reachable_offsets(std::size_t filter_size, std::span<const std::size_t> dilations) {
    std::vector<bool> reach{true};
    for (std::size_t d : dilations) {
        std::vector<bool> next(reach.size() + (filter_size - 1) * d, false);
        for (std::size_t o = 0; o < reach.size(); ++o)
            if (reach[o])
                for (std::size_t j = 0; j < filter_size; ++j) next[o + j * d] = true;
        reach = std::move(next);
    }
    return reach;
}

ProbeReport probe_arch(const DecoderArch& arch, std::uint64_t seed) {
    if (arch.kind != DecoderKind::cnn) throw ConfigError("probe_arch needs a CNN decoder, got '" + arch.name + "'");
    arch.validate();
    ProbeReport r;
    r.name = arch.name;
    r.filter_size = arch.filter_size;
    r.dilations = arch.dilations;
    r.analytic = arch.receptive_field();
    // Wide random weights with positive biases keep the ReLUs alive.
    Rng rng = Rng(seed).split("probe");
    constexpr std::size_t ext = 8, internal = 6;
    std::vector<ResidualBlockParams> blocks;
    for (std::size_t d : arch.dilations) {
        ResidualBlockParams b = ResidualBlockParams::init(ext, internal, arch.filter_size, d, rng);
        for (Tensor* w : {&b.w_in, &b.w_mid, &b.w_out})
            for (double& v : w->values()) v = rng.uniform(-1.0, 1.0);
        for (Tensor* bias : {&b.b_in, &b.b_mid, &b.b_out})
            for (double& v : bias->values()) v = rng.uniform(0.5, 1.0);
        blocks.push_back(std::move(b));
    }
    // Probe a position with a full window behind it and a few steps after.
    const std::size_t t = r.analytic + 2, steps = t + 4;
    const auto sens = sensitivity(blocks, ext, steps, t, rng);
    const std::vector<bool> reach = reachable_offsets(arch.filter_size, arch.dilations);
    std::size_t first = t + 1;
    for (std::size_t s = 0; s < steps; ++s) {
        const bool live = sens[s] > 0.0;
        if (s > t && live) r.causality_violations.push_back(static_cast<long long>(s - t));
        if (s <= t) {
            const bool inside = t - s < reach.size() && reach[t - s];
            if (live != inside) r.window_mismatches.push_back(static_cast<long long>(t - s));
            if (live && s < first) first = s;
        }
    }
    r.empirical = first <= t ? t - first + 1 : 0;
    return r;
}

std::vector<DecoderArch> random_archs(std::size_t count, std::uint64_t seed) {
    Rng rng = Rng(seed).split("random_archs");
    std::vector<DecoderArch> out;
    for (std::size_t i = 0; i < count; ++i) {
        DecoderArch a;
        a.kind = DecoderKind::cnn;
        a.filter_size = 1 + rng.below(4);
        const std::size_t layers = 1 + rng.below(5);
        for (std::size_t l = 0; l < layers; ++l) a.dilations.push_back(std::size_t{1} << rng.below(4));
        a.name = "random" + std::to_string(i);
        out.push_back(std::move(a));
    }
    return out;
}

std::string format_probe(const ProbeReport& r) {
    std::string dil;
    for (std::size_t i = 0; i < r.dilations.size(); ++i) dil += (i ? "," : "") + std::to_string(r.dilations[i]);
    std::string line = r.name + " k=" + std::to_string(r.filter_size) + " dilations=[" + dil +
                       "] analytic=" + std::to_string(r.analytic) + " empirical=" + std::to_string(r.empirical) +
                       (r.ok() ? " ok" : " FAIL");
    auto offsets = [](const std::vector<long long>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size() && i < 20; ++i) s += (i ? "," : "") + std::to_string(v[i]);
        return s;
    };
    if (!r.causality_violations.empty()) line += "\n  causality violated at future offsets " + offsets(r.causality_violations);
    if (!r.window_mismatches.empty()) line += "\n  support differs at past offsets " + offsets(r.window_mismatches);
    return line;
}

} // namespace dilvae
