#include "dilvae/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "dilvae/errors.hpp"

namespace dilvae {

namespace {

Tape& same_tape(Var a, Var b) {
    if (a.tape != b.tape || a.tape == nullptr) throw std::logic_error("operands live on different tapes");
    return *a.tape;
}

void require_same_shape(const char* op, Var a, Var b) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const char* op, Var x, std::size_t rank) {
    if (x.value().rank() != rank)
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(x.shape()));
}

/// Accumulates scale * g into the gradient of `in` when it wants one.
void accumulate(Tape& tape, NodeId in, const Tensor& g, double s = 1.0) {
    if (!tape.requires_grad(in)) return;
    Tensor& gx = tape.grad_buffer(in);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += s * g[i];
}

template <class Fwd, class Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
    Tape& tape = *x.tape;
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = fwd(xv[i]);
    return tape.record(std::move(out), {x}, [deriv](Tape& t, NodeId self) {
        NodeId in = t.inputs(self)[0];
        if (!t.requires_grad(in)) return;
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.value(in);
        const Tensor& yv = t.value(self);
        Tensor& gx = t.grad_buffer(in);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
    });
}

// Strides for splitting a tensor at `axis` into (outer, axis, inner) blocks.
struct AxisView {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

} // namespace

Var add(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    require_same_shape("add", a, b);
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return tape.record(std::move(out), {a, b}, [](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        accumulate(t, t.inputs(self)[0], g);
        accumulate(t, t.inputs(self)[1], g);
    });
}

Var sub(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    require_same_shape("sub", a, b);
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    return tape.record(std::move(out), {a, b}, [](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        accumulate(t, t.inputs(self)[0], g);
        accumulate(t, t.inputs(self)[1], g, -1.0);
    });
}

Var mul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    require_same_shape("mul", a, b);
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return tape.record(std::move(out), {a, b}, [](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        NodeId ia = t.inputs(self)[0], ib = t.inputs(self)[1];
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        if (t.requires_grad(ia)) {
            Tensor& ga = t.grad_buffer(ia);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(ib)) {
            Tensor& gb = t.grad_buffer(ib);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

Var scale(Var x, double s) {
    return unary(x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var add_scalar(Var x, double s) {
    return unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var square(Var x) {
    return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var add_bias(Var x, Var bias) {
    Tape& tape = same_tape(x, bias);
    require_rank("add_bias", x, 2);
    const std::size_t n = x.dim(0), m = x.dim(1);
    if (bias.value().numel() != m)
        throw DimensionError("add_bias: input " + shape_str(x.shape()) + " vs bias " + shape_str(bias.shape()));
    Tensor out = x.value();
    const Tensor& bv = bias.value();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) out[r * m + c] += bv[c];
    return tape.record(std::move(out), {x, bias}, [n, m](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        accumulate(t, t.inputs(self)[0], g);
        NodeId ib = t.inputs(self)[1];
        if (t.requires_grad(ib)) {
            Tensor& gb = t.grad_buffer(ib);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < m; ++c) gb[c] += g[r * m + c];
        }
    });
}

Var add_channel_bias(Var x, Var bias) {
    Tape& tape = same_tape(x, bias);
    require_rank("add_channel_bias", x, 3);
    const std::size_t nb = x.dim(0), nc = x.dim(1), nt = x.dim(2);
    if (bias.value().numel() != nc)
        throw DimensionError("add_channel_bias: input " + shape_str(x.shape()) + " vs bias " +
                             shape_str(bias.shape()));
    Tensor out = x.value();
    const Tensor& bv = bias.value();
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t c = 0; c < nc; ++c) {
            double* row = out.data() + (b * nc + c) * nt;
            for (std::size_t k = 0; k < nt; ++k) row[k] += bv[c];
        }
    return tape.record(std::move(out), {x, bias}, [nb, nc, nt](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        accumulate(t, t.inputs(self)[0], g);
        NodeId ib = t.inputs(self)[1];
        if (t.requires_grad(ib)) {
            Tensor& gb = t.grad_buffer(ib);
            for (std::size_t b = 0; b < nb; ++b)
                for (std::size_t c = 0; c < nc; ++c) {
                    const double* row = g.data() + (b * nc + c) * nt;
                    double s = 0.0;
                    for (std::size_t k = 0; k < nt; ++k) s += row[k];
                    gb[c] += s;
                }
        }
    });
}

Var matmul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
        throw DimensionError("matmul: cannot multiply " + shape_str(av.shape()) + " by " + shape_str(bv.shape()));
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = bv.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    return tape.record(std::move(out), {a, b}, [m, k, n](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        NodeId ia = t.inputs(self)[0], ib = t.inputs(self)[1];
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        if (t.requires_grad(ia)) {
            // dA = G * B^T
            Tensor& ga = t.grad_buffer(ia);
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double* brow = bv.data() + p * n;
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    ga[i * k + p] += s;
                }
            }
        }
        if (t.requires_grad(ib)) {
            // dB = A^T * G
            Tensor& gb = t.grad_buffer(ib);
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = av[i * k + p];
                    if (aip == 0.0) continue;
                    double* gbrow = gb.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                }
            }
        }
    });
}

Var relu(Var x) {
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
    return unary(
        x,
        [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
    return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var x) {
    return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
    return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    Tape& tape = *parts[0].tape;
    Shape shape = parts[0].shape();
    if (axis >= shape.size()) throw DimensionError("concat: axis out of range for " + shape_str(shape));
    std::size_t total = 0;
    std::vector<std::size_t> extents;
    for (const Var& p : parts) {
        same_tape(parts[0], p);
        Shape s = p.shape();
        if (s.size() != shape.size()) throw DimensionError("concat: rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != shape[d])
                throw DimensionError("concat: " + shape_str(shape) + " vs " + shape_str(s));
        extents.push_back(s[axis]);
        total += s[axis];
    }
    shape[axis] = total;
    Tensor out(shape);
    const AxisView view = axis_view(shape, axis);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        const std::size_t chunk = extents[k] * view.inner;
        for (std::size_t o = 0; o < view.outer; ++o)
            std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * total * view.inner + offset * view.inner);
        offset += extents[k];
    }
    return tape.record(std::move(out), parts, [extents, view, total](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < extents.size(); ++k) {
            NodeId in = t.inputs(self)[k];
            const std::size_t chunk = extents[k] * view.inner;
            if (t.requires_grad(in)) {
                Tensor& gx = t.grad_buffer(in);
                for (std::size_t o = 0; o < view.outer; ++o) {
                    const double* src = g.data() + o * total * view.inner + offset * view.inner;
                    double* dst = gx.data() + o * chunk;
                    for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                }
            }
            offset += extents[k];
        }
    });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
    Tape& tape = *x.tape;
    Shape shape = x.shape();
    if (axis >= shape.size() || begin >= end || end > shape[axis])
        throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                             std::to_string(axis) + " of " + shape_str(shape));
    const AxisView view = axis_view(shape, axis);
    shape[axis] = end - begin;
    Tensor out(shape);
    const std::size_t chunk = (end - begin) * view.inner;
    const Tensor& xv = x.value();
    for (std::size_t o = 0; o < view.outer; ++o)
        std::copy_n(xv.data() + (o * view.extent + begin) * view.inner, chunk, out.data() + o * chunk);
    return tape.record(std::move(out), {x}, [view, begin, chunk](Tape& t, NodeId self) {
        NodeId in = t.inputs(self)[0];
        if (!t.requires_grad(in)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_buffer(in);
        for (std::size_t o = 0; o < view.outer; ++o) {
            double* dst = gx.data() + (o * view.extent + begin) * view.inner;
            const double* src = g.data() + o * chunk;
            for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
    });
}

Var reshape(Var x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return x.tape->record(std::move(out), {x}, [](Tape& t, NodeId self) {
        accumulate(t, t.inputs(self)[0], t.grad(self));
    });
}

Var swap_last_axes(Var x) {
    require_rank("swap_last_axes", x, 3);
    const std::size_t nb = x.dim(0), nx = x.dim(1), ny = x.dim(2);
    const Tensor& xv = x.value();
    Tensor out({nb, ny, nx});
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t i = 0; i < nx; ++i)
            for (std::size_t j = 0; j < ny; ++j) out[(b * ny + j) * nx + i] = xv[(b * nx + i) * ny + j];
    return x.tape->record(std::move(out), {x}, [nb, nx, ny](Tape& t, NodeId self) {
        NodeId in = t.inputs(self)[0];
        if (!t.requires_grad(in)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_buffer(in);
        for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t i = 0; i < nx; ++i)
                for (std::size_t j = 0; j < ny; ++j) gx[(b * nx + i) * ny + j] += g[(b * ny + j) * nx + i];
    });
}

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    return x.tape->record(Tensor::scalar(s), {x}, [](Tape& t, NodeId self) {
        NodeId in = t.inputs(self)[0];
        if (!t.requires_grad(in)) return;
        const double g = t.grad(self)[0];
        for (double& v : t.grad_buffer(in).values()) v += g;
    });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var sum_axis(Var x, std::size_t axis) {
    Shape shape = x.shape();
    if (axis >= shape.size()) throw DimensionError("sum_axis: axis out of range for " + shape_str(shape));
    const AxisView view = axis_view(shape, axis);
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (shape.empty()) shape = {1};
    Tensor out(shape);
    const Tensor& xv = x.value();
    for (std::size_t o = 0; o < view.outer; ++o)
        for (std::size_t e = 0; e < view.extent; ++e)
            for (std::size_t i = 0; i < view.inner; ++i)
                out[o * view.inner + i] += xv[(o * view.extent + e) * view.inner + i];
    return x.tape->record(std::move(out), {x}, [view](Tape& t, NodeId self) {
        NodeId in = t.inputs(self)[0];
        if (!t.requires_grad(in)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_buffer(in);
        for (std::size_t o = 0; o < view.outer; ++o)
            for (std::size_t e = 0; e < view.extent; ++e)
                for (std::size_t i = 0; i < view.inner; ++i)
                    gx[(o * view.extent + e) * view.inner + i] += g[o * view.inner + i];
    });
}

Var embedding(Var table, std::span<const int> ids) {
    require_rank("embedding", table, 2);
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw DimensionError("embedding: no ids");
    const Tensor& tv = table.value();
    Tensor out({ids.size(), d});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab)
            throw IndexError("token id " + std::to_string(ids[r]) + " outside vocabulary of size " +
                             std::to_string(vocab));
        std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * d, d, out.data() + r * d);
    }
    std::vector<int> idcopy(ids.begin(), ids.end());
    return table.tape->record(std::move(out), {table}, [idcopy = std::move(idcopy), d](Tape& t, NodeId self) {
        NodeId in = t.inputs(self)[0];
        if (!t.requires_grad(in)) return;
        const Tensor& g = t.grad(self);
        Tensor& gt = t.grad_buffer(in);
        for (std::size_t r = 0; r < idcopy.size(); ++r) {
            double* dst = gt.data() + static_cast<std::size_t>(idcopy[r]) * d;
            const double* src = g.data() + r * d;
            for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
        }
    });
}

Var dropout(Var x, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0) throw ParameterError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    Tensor maskv(x.shape());
    for (double& m : maskv.values()) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
    Var mask = x.tape->constant(std::move(maskv));
    return mul(x, mask);
}

Var conv1d_causal(Var x, Var w, std::size_t dilation) {
    Tape& tape = same_tape(x, w);
    if (dilation < 1) throw ParameterError("conv1d_causal: dilation must be positive");
    require_rank("conv1d_causal input", x, 3);
    require_rank("conv1d_causal weight", w, 3);
    const std::size_t nb = x.dim(0), cin = x.dim(1), nt = x.dim(2);
    const std::size_t cout = w.dim(0), kw = w.dim(2);
    if (w.dim(1) != cin)
        throw DimensionError("conv1d_causal: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    Tensor out({nb, cout, nt});
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t o = 0; o < cout; ++o) {
            double* orow = out.data() + (b * cout + o) * nt;
            for (std::size_t i = 0; i < cin; ++i) {
                const double* xrow = xv.data() + (b * cin + i) * nt;
                for (std::size_t j = 0; j < kw; ++j) {
                    const double wt = wv[(o * cin + i) * kw + j];
                    const std::size_t shift = (kw - 1 - j) * dilation;
                    if (wt == 0.0 || shift >= nt) continue;
                    for (std::size_t t = shift; t < nt; ++t) orow[t] += wt * xrow[t - shift];
                }
            }
        }
    return tape.record(std::move(out), {x, w}, [=](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        NodeId ix = t.inputs(self)[0], iw = t.inputs(self)[1];
        const Tensor& xv = t.value(ix);
        const Tensor& wv = t.value(iw);
        const bool want_x = t.requires_grad(ix), want_w = t.requires_grad(iw);
        Tensor* gx = want_x ? &t.grad_buffer(ix) : nullptr;
        Tensor* gw = want_w ? &t.grad_buffer(iw) : nullptr;
        for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t o = 0; o < cout; ++o) {
                const double* grow = g.data() + (b * cout + o) * nt;
                for (std::size_t i = 0; i < cin; ++i) {
                    const double* xrow = xv.data() + (b * cin + i) * nt;
                    double* gxrow = want_x ? gx->data() + (b * cin + i) * nt : nullptr;
                    for (std::size_t j = 0; j < kw; ++j) {
                        const std::size_t shift = (kw - 1 - j) * dilation;
                        if (shift >= nt) continue;
                        const std::size_t widx = (o * cin + i) * kw + j;
                        if (want_x) {
                            const double wt = wv[widx];
                            if (wt != 0.0)
                                for (std::size_t s = 0; s + shift < nt; ++s) gxrow[s] += wt * grow[s + shift];
                        }
                        if (want_w) {
                            double acc = 0.0;
                            for (std::size_t s = shift; s < nt; ++s) acc += grow[s] * xrow[s - shift];
                            (*gw)[widx] += acc;
                        }
                    }
                }
            }
    });
}

Var softmax_cross_entropy_rows(Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
    require_rank("softmax_cross_entropy", logits, 2);
    const std::size_t n = logits.dim(0), v = logits.dim(1);
    if (targets.size() != n || mask.size() != n)
        throw DimensionError("softmax_cross_entropy: " + std::to_string(n) + " rows but " +
                             std::to_string(targets.size()) + " targets and " + std::to_string(mask.size()) +
                             " mask entries");
    const Tensor& lv = logits.value();
    Tensor out({n});
    // Softmax probabilities of unmasked rows, kept for the backward pass.
    auto probs = std::make_shared<Tensor>(Shape{n, v});
    for (std::size_t r = 0; r < n; ++r) {
        if (!mask[r]) continue;
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v)
            throw IndexError("target id " + std::to_string(targets[r]) + " outside " + std::to_string(v) +
                             " classes");
        const double* row = lv.data() + r * v;
        const double mx = *std::max_element(row, row + v);
        double z = 0.0;
        double* p = probs->data() + r * v;
        for (std::size_t c = 0; c < v; ++c) {
            p[c] = std::exp(row[c] - mx);
            z += p[c];
        }
        for (std::size_t c = 0; c < v; ++c) p[c] /= z;
        out[r] = -(row[targets[r]] - mx - std::log(z));
    }
    std::vector<int> tcopy(targets.begin(), targets.end());
    std::vector<std::uint8_t> mcopy(mask.begin(), mask.end());
    return logits.tape->record(
        std::move(out), {logits}, [probs, tcopy = std::move(tcopy), mcopy = std::move(mcopy), n, v](Tape& t, NodeId self) {
            NodeId in = t.inputs(self)[0];
            if (!t.requires_grad(in)) return;
            const Tensor& g = t.grad(self);
            Tensor& gl = t.grad_buffer(in);
            for (std::size_t r = 0; r < n; ++r) {
                if (!mcopy[r] || g[r] == 0.0) continue;
                const double* p = probs->data() + r * v;
                double* dst = gl.data() + r * v;
                for (std::size_t c = 0; c < v; ++c) dst[c] += g[r] * p[c];
                dst[tcopy[r]] -= g[r];
            }
        });
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
    return sum(softmax_cross_entropy_rows(logits, targets, mask));
}

Var log_softmax(Var logits) {
    require_rank("log_softmax", logits, 2);
    const std::size_t n = logits.dim(0), v = logits.dim(1);
    const Tensor& lv = logits.value();
    Tensor out({n, v});
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = lv.data() + r * v;
        const double mx = *std::max_element(row, row + v);
        double z = 0.0;
        for (std::size_t c = 0; c < v; ++c) z += std::exp(row[c] - mx);
        const double lz = mx + std::log(z);
        for (std::size_t c = 0; c < v; ++c) out[r * v + c] = row[c] - lz;
    }
    return logits.tape->record(std::move(out), {logits}, [n, v](Tape& t, NodeId self) {
        NodeId in = t.inputs(self)[0];
        if (!t.requires_grad(in)) return;
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& gl = t.grad_buffer(in);
        for (std::size_t r = 0; r < n; ++r) {
            double gs = 0.0;
            for (std::size_t c = 0; c < v; ++c) gs += g[r * v + c];
            for (std::size_t c = 0; c < v; ++c) gl[r * v + c] += g[r * v + c] - std::exp(y[r * v + c]) * gs;
        }
    });
}

Var softmax(Var logits) { return exp(log_softmax(logits)); }

Var where_rows(std::span<const std::uint8_t> keep, Var a, Var b) {
    Tape& tape = same_tape(a, b);
    require_same_shape("where_rows", a, b);
    require_rank("where_rows", a, 2);
    const std::size_t n = a.dim(0), d = a.dim(1);
    if (keep.size() != n) throw DimensionError("where_rows: mask length does not match rows");
    Tensor out(a.shape());
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    for (std::size_t r = 0; r < n; ++r)
        std::copy_n((keep[r] ? av : bv).data() + r * d, d, out.data() + r * d);
    std::vector<std::uint8_t> kcopy(keep.begin(), keep.end());
    return tape.record(std::move(out), {a, b}, [kcopy = std::move(kcopy), n, d](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        for (int side = 0; side < 2; ++side) {
            NodeId in = t.inputs(self)[static_cast<std::size_t>(side)];
            if (!t.requires_grad(in)) continue;
            Tensor& gx = t.grad_buffer(in);
            for (std::size_t r = 0; r < n; ++r) {
                if ((kcopy[r] != 0) != (side == 0)) continue;
                for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += g[r * d + c];
            }
        }
    });
}

Var broadcast_time(Var z, std::size_t steps) {
    require_rank("broadcast_time", z, 2);
    const std::size_t nb = z.dim(0), d = z.dim(1);
    const Tensor& zv = z.value();
    Tensor out({nb, steps, d});
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t t = 0; t < steps; ++t) std::copy_n(zv.data() + b * d, d, out.data() + (b * steps + t) * d);
    return z.tape->record(std::move(out), {z}, [nb, steps, d](Tape& t, NodeId self) {
        NodeId in = t.inputs(self)[0];
        if (!t.requires_grad(in)) return;
        const Tensor& g = t.grad(self);
        Tensor& gz = t.grad_buffer(in);
        for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t s = 0; s < steps; ++s)
                for (std::size_t c = 0; c < d; ++c) gz[b * d + c] += g[(b * steps + s) * d + c];
    });
}

Var select_time(Var x, std::size_t step) {
    require_rank("select_time", x, 3);
    const std::size_t nb = x.dim(0), nt = x.dim(1), d = x.dim(2);
    if (step >= nt) throw DimensionError("select_time: step " + std::to_string(step) + " of " + shape_str(x.shape()));
    const Tensor& xv = x.value();
    Tensor out({nb, d});
    for (std::size_t b = 0; b < nb; ++b) std::copy_n(xv.data() + (b * nt + step) * d, d, out.data() + b * d);
    return x.tape->record(std::move(out), {x}, [nb, nt, d, step](Tape& t, NodeId self) {
        NodeId in = t.inputs(self)[0];
        if (!t.requires_grad(in)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_buffer(in);
        for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t c = 0; c < d; ++c) gx[(b * nt + step) * d + c] += g[b * d + c];
    });
}

Var stack_time(std::span<const Var> steps) {
    if (steps.empty()) throw DimensionError("stack_time: no steps");
    const Shape s0 = steps[0].shape();
    if (s0.size() != 2) throw DimensionError("stack_time: steps must be [B x D]");
    const std::size_t nb = s0[0], d = s0[1], nt = steps.size();
    Tensor out({nb, nt, d});
    for (std::size_t t = 0; t < nt; ++t) {
        if (steps[t].shape() != s0) throw DimensionError("stack_time: inconsistent step shapes");
        const Tensor& sv = steps[t].value();
        for (std::size_t b = 0; b < nb; ++b) std::copy_n(sv.data() + b * d, d, out.data() + (b * nt + t) * d);
    }
    return steps[0].tape->record(std::move(out), steps, [nb, nt, d](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        for (std::size_t s = 0; s < nt; ++s) {
            NodeId in = t.inputs(self)[s];
            if (!t.requires_grad(in)) continue;
            Tensor& gx = t.grad_buffer(in);
            for (std::size_t b = 0; b < nb; ++b)
                for (std::size_t c = 0; c < d; ++c) gx[b * d + c] += g[(b * nt + s) * d + c];
        }
    });
}

Var clamp_min(Var x, double floor) {
    if (x.value().numel() != 1) throw DimensionError("clamp_min expects a scalar");
    return unary(
        x, [floor](double v) { return std::max(floor, v); }, [floor](double v, double) { return v > floor ? 1.0 : 0.0; });
}

Var lstm_pointwise(Var gates, Var c) {
    Tape& tape = same_tape(gates, c);
    require_rank("lstm_pointwise", gates, 2);
    require_rank("lstm_pointwise", c, 2);
    const std::size_t nb = c.dim(0), h = c.dim(1);
    if (gates.dim(0) != nb || gates.dim(1) != 4 * h)
        throw DimensionError("lstm_pointwise: gates " + shape_str(gates.shape()) + " vs cell " + shape_str(c.shape()));
    auto sig = [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); };
    const Tensor& gv = gates.value();
    const Tensor& cv = c.value();
    // Activated gates and tanh(c') for the backward pass.
    auto cache = std::make_shared<Tensor>(Shape{nb, 5 * h});
    Tensor out({nb, 2 * h});
    for (std::size_t b = 0; b < nb; ++b) {
        const double* gr = gv.data() + b * 4 * h;
        double* cr = cache->data() + b * 5 * h;
        for (std::size_t k = 0; k < h; ++k) {
            const double ig = sig(gr[k]);
            const double fg = sig(gr[h + k]);
            const double gg = std::tanh(gr[2 * h + k]);
            const double og = sig(gr[3 * h + k]);
            const double cn = fg * cv[b * h + k] + ig * gg;
            const double tc = std::tanh(cn);
            cr[k] = ig;
            cr[h + k] = fg;
            cr[2 * h + k] = gg;
            cr[3 * h + k] = og;
            cr[4 * h + k] = tc;
            out[b * 2 * h + k] = og * tc;
            out[b * 2 * h + h + k] = cn;
        }
    }
    return tape.record(std::move(out), {gates, c}, [cache, nb, h](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        NodeId ig_id = t.inputs(self)[0], ic_id = t.inputs(self)[1];
        const Tensor& cv = t.value(ic_id);
        const bool want_g = t.requires_grad(ig_id), want_c = t.requires_grad(ic_id);
        Tensor* gg_buf = want_g ? &t.grad_buffer(ig_id) : nullptr;
        Tensor* gc_buf = want_c ? &t.grad_buffer(ic_id) : nullptr;
        for (std::size_t b = 0; b < nb; ++b) {
            const double* cr = cache->data() + b * 5 * h;
            for (std::size_t k = 0; k < h; ++k) {
                const double ig = cr[k], fg = cr[h + k], gg = cr[2 * h + k], og = cr[3 * h + k], tc = cr[4 * h + k];
                const double dh = g[b * 2 * h + k];
                const double dc = g[b * 2 * h + h + k] + dh * og * (1.0 - tc * tc);
                if (want_g) {
                    double* dst = gg_buf->data() + b * 4 * h;
                    dst[k] += dc * gg * ig * (1.0 - ig);
                    dst[h + k] += dc * cv[b * h + k] * fg * (1.0 - fg);
                    dst[2 * h + k] += dc * ig * (1.0 - gg * gg);
                    dst[3 * h + k] += dh * tc * og * (1.0 - og);
                }
                if (want_c) (*gc_buf)[b * h + k] += dc * fg;
            }
        }
    });
}

} // namespace dilvae
