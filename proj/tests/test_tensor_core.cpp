#include <cmath>
#include <numeric>

#include "doctest.h"
#include "dilvae/errors.hpp"
#include "dilvae/grad_check.hpp"
#include "dilvae/ops.hpp"

using namespace dilvae;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    return Tensor::uniform(std::move(shape), lo, hi, rng);
}

// Weighted sum with fixed pseudo-random weights so every output coordinate
// contributes a distinct gradient.
Var probe_sum(Var x) {
    Rng rng(991);
    Var w = x.tape->constant(Tensor::uniform(x.shape(), 0.5, 1.5, rng));
    return sum(mul(x, w));
}

} // namespace

TEST_CASE("matmul values") {
    Tape tape;
    Var eye = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    Var m = tape.constant(Tensor({2, 2}, {2, 3, 4, 5}));
    CHECK(matmul(eye, m).value() == Tensor({2, 2}, {2, 3, 4, 5}));

    Var row = tape.constant(Tensor({1, 2}, {1, 2}));
    Var col = tape.constant(Tensor({2, 1}, {3, 4}));
    CHECK(matmul(row, col).value().item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape tape;
    Var a = tape.constant(Tensor({2, 3}));
    Var b = tape.constant(Tensor({2, 3}));
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient matches central differences") {
    auto f = [](Tape&, std::span<const Var> in) { return probe_sum(matmul(in[0], in[1])); };
    auto report = grad_check(f, {random_tensor({3, 4}, 1), random_tensor({4, 2}, 2)}, 1e-5);
    CHECK(report.coordinates_checked == 20);
    CHECK(report.max_rel_error <= 1e-6);
}

TEST_CASE("conv1d_causal identity 1x1") {
    Tape tape;
    Var x = tape.constant(random_tensor({2, 3, 5}, 3));
    Tensor w({3, 3, 1});
    for (std::size_t c = 0; c < 3; ++c) w.at(c, c, 0) = 1.0;
    CHECK(conv1d_causal(x, tape.constant(w), 1).value() == x.value());
}

TEST_CASE("conv1d_causal dilated hand example") {
    Tape tape;
    Var x = tape.constant(Tensor({1, 1, 4}, {1, 2, 3, 4}));
    Var w = tape.constant(Tensor({1, 1, 2}, {1, 1}));
    // y_t = x_t + x_{t-2}, zero padded on the left.
    CHECK(conv1d_causal(x, w, 2).value() == Tensor({1, 1, 4}, {1, 2, 4, 6}));
}

TEST_CASE("conv1d_causal tap order follows left padding") {
    Tape tape;
    Var x = tape.constant(Tensor({1, 1, 4}, {1, 2, 3, 4}));
    // Last tap sees the current position, the first tap looks back dilation slots.
    Var w = tape.constant(Tensor({1, 1, 2}, {10, 1}));
    CHECK(conv1d_causal(x, w, 1).value() == Tensor({1, 1, 4}, {1, 12, 23, 34}));
}

TEST_CASE("conv1d_causal rejects zero dilation") {
    Tape tape;
    Var x = tape.constant(Tensor({1, 1, 4}));
    Var w = tape.constant(Tensor({1, 1, 2}));
    CHECK_THROWS_AS(conv1d_causal(x, w, 0), ParameterError);
}

TEST_CASE("conv1d_causal is causal: future inputs have exactly zero influence") {
    const std::size_t T = 24;
    for (std::size_t t = 0; t < T; ++t) {
        Tape tape;
        Var x = tape.leaf(random_tensor({1, 2, T}, 10 + t));
        Var w = tape.constant(random_tensor({3, 2, 3}, 77));
        Var y = conv1d_causal(x, w, 4);
        Tensor seed(y.shape());
        for (std::size_t o = 0; o < 3; ++o) seed.at(0, o, t) = 1.0;
        tape.backward(y, seed);
        const Tensor& g = tape.grad(x);
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t s = t + 1; s < T; ++s) CHECK(g.at(0, c, s) == 0.0);
    }
}

TEST_CASE("stacked dilated convolutions: gradient support starts at t - (k-1)*sum(d)") {
    const std::size_t T = 40, k = 3;
    const std::vector<std::size_t> dilations{1, 2, 4};
    const std::size_t reach = (k - 1) * 7;
    const std::size_t t = T - 1;
    Tape tape;
    Var x = tape.leaf(random_tensor({1, 2, T}, 5));
    Var h = x;
    for (std::size_t i = 0; i < dilations.size(); ++i)
        h = conv1d_causal(h, tape.constant(random_tensor({2, 2, k}, 100 + i)), dilations[i]);
    Tensor seed(h.shape());
    seed.at(0, 0, t) = 1.0;
    tape.backward(h, seed);
    const Tensor& g = tape.grad(x);
    std::size_t min_support = T;
    for (std::size_t s = 0; s < T; ++s)
        if (g.at(0, 0, s) != 0.0 || g.at(0, 1, s) != 0.0) min_support = std::min(min_support, s);
    CHECK(min_support == t - reach);
}

TEST_CASE("conv1d_causal gradient check") {
    auto f = [](Tape&, std::span<const Var> in) { return probe_sum(conv1d_causal(in[0], in[1], 2)); };
    auto report = grad_check(f, {random_tensor({2, 3, 7}, 8), random_tensor({2, 3, 3}, 9)});
    CHECK(report.max_rel_error <= 1e-6);
}

TEST_CASE("softmax_cross_entropy values") {
    Tape tape;
    const std::vector<int> target{2};
    const std::vector<std::uint8_t> on{1};
    Var uniform = tape.constant(Tensor({1, 4}, 0.3));
    CHECK(softmax_cross_entropy(uniform, target, on).value().item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Tensor peaked({1, 4});
    peaked[2] = 1e6;
    CHECK(softmax_cross_entropy(tape.constant(peaked), target, on).value().item() == doctest::Approx(0.0));
}

TEST_CASE("softmax_cross_entropy masks rows and validates targets") {
    Tape tape;
    Var logits = tape.constant(random_tensor({3, 4}, 4));
    const std::vector<int> targets{0, 1, 2};
    const std::vector<std::uint8_t> mask{1, 0, 1};
    Var rows = softmax_cross_entropy_rows(logits, targets, mask);
    CHECK(rows.value()[1] == 0.0);
    CHECK(rows.value()[0] > 0.0);

    const std::vector<int> bad{0, 4, 1};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, bad, std::vector<std::uint8_t>{1, 1, 1}), IndexError);
    // A masked row may carry any id (padding).
    CHECK_NOTHROW(softmax_cross_entropy(logits, bad, mask));
}

TEST_CASE("softmax_cross_entropy gradient check") {
    const std::vector<int> targets{0, 6, 3, 2, 5};
    const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1};
    auto f = [&](Tape&, std::span<const Var> in) { return softmax_cross_entropy(in[0], targets, mask); };
    auto report = grad_check(f, {random_tensor({5, 7}, 12, -2, 2)});
    CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("grad_check trivial functions") {
    auto f_sum = [](Tape&, std::span<const Var> in) { return sum(in[0]); };
    CHECK(grad_check(f_sum, {random_tensor({3, 2}, 1)}).max_rel_error < 1e-9);

    Tape tape;
    Var x = tape.leaf(Tensor({2}, {1, 2}));
    Var y = sum(square(x));
    tape.backward(y);
    CHECK(tape.grad(x)[0] == doctest::Approx(2.0));
    CHECK(tape.grad(x)[1] == doctest::Approx(4.0));
}

TEST_CASE("grad_check reports non-finite values") {
    auto f = [](Tape&, std::span<const Var> in) { return sum(log(in[0])); };
    CHECK_THROWS_AS(grad_check(f, {Tensor({2}, {-1.0, 1.0})}), NumericError);
}

TEST_CASE("every differentiable op passes grad_check") {
    const double tol = 1e-4;
    auto check = [&](const char* name, ScalarFunction f, std::vector<Tensor> inputs) {
        auto report = grad_check(f, std::move(inputs));
        INFO(name << " worst at " << report.where);
        CHECK(report.max_rel_error <= tol);
    };
    check("add", [](Tape&, std::span<const Var> v) { return probe_sum(add(v[0], v[1])); },
          {random_tensor({2, 3}, 1), random_tensor({2, 3}, 2)});
    check("sub", [](Tape&, std::span<const Var> v) { return probe_sum(sub(v[0], v[1])); },
          {random_tensor({2, 3}, 1), random_tensor({2, 3}, 2)});
    check("mul", [](Tape&, std::span<const Var> v) { return probe_sum(mul(v[0], v[1])); },
          {random_tensor({2, 3}, 1), random_tensor({2, 3}, 2)});
    check("scale/add_scalar", [](Tape&, std::span<const Var> v) { return probe_sum(add_scalar(scale(v[0], -1.7), 3)); },
          {random_tensor({4}, 3)});
    check("relu", [](Tape&, std::span<const Var> v) { return probe_sum(relu(v[0])); }, {random_tensor({3, 3}, 4)});
    check("sigmoid", [](Tape&, std::span<const Var> v) { return probe_sum(sigmoid(v[0])); }, {random_tensor({3, 3}, 5)});
    check("tanh", [](Tape&, std::span<const Var> v) { return probe_sum(tanh(v[0])); }, {random_tensor({3, 3}, 6)});
    check("exp", [](Tape&, std::span<const Var> v) { return probe_sum(exp(v[0])); }, {random_tensor({3, 3}, 7)});
    check("log", [](Tape&, std::span<const Var> v) { return probe_sum(log(v[0])); },
          {random_tensor({3, 3}, 8, 0.5, 2.0)});
    check("add_bias", [](Tape&, std::span<const Var> v) { return probe_sum(add_bias(v[0], v[1])); },
          {random_tensor({3, 2}, 9), random_tensor({2}, 10)});
    check("add_channel_bias", [](Tape&, std::span<const Var> v) { return probe_sum(add_channel_bias(v[0], v[1])); },
          {random_tensor({2, 3, 4}, 9), random_tensor({3}, 10)});
    check("concat axis 1",
          [](Tape&, std::span<const Var> v) { return probe_sum(concat({v[0], v[1]}, 1)); },
          {random_tensor({2, 3, 2}, 11), random_tensor({2, 1, 2}, 12)});
    check("slice", [](Tape&, std::span<const Var> v) { return probe_sum(slice(v[0], 1, 1, 3)); },
          {random_tensor({2, 4, 3}, 13)});
    check("reshape/swap", [](Tape&, std::span<const Var> v) { return probe_sum(swap_last_axes(reshape(v[0], {2, 3, 2}))); },
          {random_tensor({3, 4}, 14)});
    check("sum_axis", [](Tape&, std::span<const Var> v) { return probe_sum(sum_axis(v[0], 1)); },
          {random_tensor({2, 3, 4}, 15)});
    check("mean", [](Tape&, std::span<const Var> v) { return mean(square(v[0])); }, {random_tensor({5}, 16)});
    check("log_softmax", [](Tape&, std::span<const Var> v) { return probe_sum(log_softmax(v[0])); },
          {random_tensor({3, 5}, 17)});
    check("softmax", [](Tape&, std::span<const Var> v) { return probe_sum(softmax(v[0])); },
          {random_tensor({3, 5}, 18)});
    check("broadcast/select",
          [](Tape&, std::span<const Var> v) { return probe_sum(select_time(broadcast_time(v[0], 3), 1)) + probe_sum(broadcast_time(v[0], 2)); },
          {random_tensor({2, 3}, 19)});
    check("stack_time", [](Tape&, std::span<const Var> v) { return probe_sum(stack_time(std::vector<Var>{v[0], v[1], v[0]})); },
          {random_tensor({2, 3}, 20), random_tensor({2, 3}, 21)});
    check("where_rows", [](Tape&, std::span<const Var> v) {
              const std::vector<std::uint8_t> keep{1, 0, 1};
              return probe_sum(where_rows(keep, v[0], v[1]));
          },
          {random_tensor({3, 2}, 22), random_tensor({3, 2}, 23)});
    check("embedding", [](Tape&, std::span<const Var> v) {
              const std::vector<int> ids{3, 0, 3, 1};
              return probe_sum(embedding(v[0], ids));
          },
          {random_tensor({4, 3}, 24)});
    check("clamp_min live", [](Tape&, std::span<const Var> v) { return square(clamp_min(sum(v[0]), -10)); },
          {random_tensor({3}, 25)});
    check("lstm_pointwise", [](Tape&, std::span<const Var> v) { return probe_sum(lstm_pointwise(v[0], v[1])); },
          {random_tensor({2, 12}, 26, -2, 2), random_tensor({2, 3}, 27)});
}

TEST_CASE("lstm_pointwise agrees with the composed gate equations") {
    Tape tape;
    Var gates = tape.constant(random_tensor({2, 8}, 30, -2, 2));
    Var c = tape.constant(random_tensor({2, 2}, 31));
    Var fused = lstm_pointwise(gates, c);
    Var i = sigmoid(slice(gates, 1, 0, 2));
    Var f = sigmoid(slice(gates, 1, 2, 4));
    Var g = tanh(slice(gates, 1, 4, 6));
    Var o = sigmoid(slice(gates, 1, 6, 8));
    Var c_next = f * c + i * g;
    Var h_next = o * tanh(c_next);
    const Tensor& fv = fused.value();
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t k = 0; k < 2; ++k) {
            CHECK(fv.at(b, k) == doctest::Approx(h_next.value().at(b, k)).epsilon(1e-14));
            CHECK(fv.at(b, 2 + k) == doctest::Approx(c_next.value().at(b, k)).epsilon(1e-14));
        }
}

TEST_CASE("clamp_min blocks gradient below the floor") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(0.2));
    Var y = clamp_min(x, 0.5);
    CHECK(y.value().item() == 0.5);
    tape.backward(y);
    CHECK(tape.grad(x)[0] == 0.0);
}

TEST_CASE("dropout scales kept units and is identity at evaluation") {
    Tape tape;
    Rng rng(3);
    Var x = tape.constant(Tensor({1000}, 1.0));
    Var eval = dropout(x, 0.5, rng, false);
    CHECK(eval.value() == x.value());
    Var train = dropout(x, 0.5, rng, true);
    std::size_t kept = 0;
    for (double v : train.value().values()) {
        CHECK((v == 0.0 || v == 2.0));
        kept += v != 0.0;
    }
    CHECK(kept > 400);
    CHECK(kept < 600);
    CHECK_THROWS_AS(dropout(x, 1.0, rng, true), ParameterError);
}

TEST_CASE("embedding rejects out-of-range ids") {
    Tape tape;
    Var table = tape.constant(Tensor({3, 2}));
    const std::vector<int> ids{0, 3};
    CHECK_THROWS_AS(embedding(table, ids), IndexError);
}

TEST_CASE("tape linearity: backward of a sum equals the sum of backwards") {
    const Tensor x0 = random_tensor({3, 4}, 40);
    const Tensor w0 = random_tensor({4, 2}, 41);
    auto loss_a = [](Var x, Var w) { return sum(tanh(matmul(x, w))); };
    auto loss_b = [](Var x, Var w) { return sum(square(matmul(x, w))); };

    Tape joint;
    Var xj = joint.leaf(x0), wj = joint.leaf(w0);
    joint.backward(add(loss_a(xj, wj), loss_b(xj, wj)));

    Tape ta, tb;
    Var xa = ta.leaf(x0), wa = ta.leaf(w0);
    ta.backward(loss_a(xa, wa));
    Var xb = tb.leaf(x0), wb = tb.leaf(w0);
    tb.backward(loss_b(xb, wb));

    for (std::size_t i = 0; i < x0.numel(); ++i)
        CHECK(joint.grad(xj)[i] == doctest::Approx(ta.grad(xa)[i] + tb.grad(xb)[i]).epsilon(1e-13));
    for (std::size_t i = 0; i < w0.numel(); ++i)
        CHECK(joint.grad(wj)[i] == doctest::Approx(ta.grad(wa)[i] + tb.grad(wb)[i]).epsilon(1e-13));
}

TEST_CASE("tape nodes are in topological order") {
    Tape tape;
    Var a = tape.leaf(random_tensor({2}, 1));
    Var b = exp(a);
    Var c = mul(a, b);
    Var d = sum(c);
    for (NodeId id = 0; id < tape.size(); ++id)
        for (NodeId in : tape.inputs(id)) CHECK(in < id);
    CHECK(d.id == tape.size() - 1);
}

TEST_CASE("param leaves are shared per tensor") {
    Tensor p({2}, {1.0, 2.0});
    Tape tape;
    Var a = tape.param(p);
    Var b = tape.param(p);
    CHECK(a.id == b.id);
    tape.backward(sum(add(a, b)));
    REQUIRE(tape.param_grad(p) != nullptr);
    CHECK((*tape.param_grad(p))[0] == 2.0);
}
