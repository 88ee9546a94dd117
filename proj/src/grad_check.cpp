#include "dilvae/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "dilvae/errors.hpp"

namespace dilvae {

namespace {

double checked(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericError(std::string("grad_check: non-finite ") + what);
    return v;
}

void consider(GradCheckReport& report, double analytic, double numeric, double floor, const std::string& where) {
    checked(analytic, "analytic gradient");
    checked(numeric, "finite difference");
    const double err = relative_error(analytic, numeric, floor);
    ++report.coordinates_checked;
    if (err > report.max_rel_error || report.where.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        report.where = where;
        report.analytic = analytic;
        report.numeric = numeric;
    }
}

std::vector<std::size_t> probe_indices(std::size_t numel, std::size_t max_count) {
    std::vector<std::size_t> idx;
    if (max_count == 0 || max_count >= numel) {
        idx.resize(numel);
        for (std::size_t i = 0; i < numel; ++i) idx[i] = i;
        return idx;
    }
    for (std::size_t k = 0; k < max_count; ++k) idx.push_back(k * numel / max_count + (numel / max_count) / 2);
    return idx;
}

} // namespace

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const ScalarFunction& f, std::vector<Tensor> inputs, double h, double floor) {
    auto evaluate = [&](const std::vector<Tensor>& xs) {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& x : xs) vars.push_back(tape.constant(x));
        return checked(f(tape, vars).value().item(), "function value");
    };

    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(tape.leaf(x));
    Var out = f(tape, vars);
    checked(out.value().item(), "function value");
    tape.backward(out);

    GradCheckReport report;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor analytic = tape.grad(vars[k]);
        for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
            const double saved = inputs[k][i];
            inputs[k][i] = saved + h;
            const double up = evaluate(inputs);
            inputs[k][i] = saved - h;
            const double down = evaluate(inputs);
            inputs[k][i] = saved;
            consider(report, analytic[i], (up - down) / (2.0 * h), floor,
                     "input " + std::to_string(k) + " [" + std::to_string(i) + "]");
        }
    }
    return report;
}

GradCheckReport grad_check_params(const std::function<Var(Tape&)>& loss, std::span<const NamedTensor> params,
                                  double h, double floor, std::size_t max_per_tensor) {
    auto evaluate = [&] {
        Tape tape;
        return checked(loss(tape).value().item(), "loss value");
    };

    Tape tape;
    Var out = loss(tape);
    checked(out.value().item(), "loss value");
    tape.backward(out);

    GradCheckReport report;
    for (const NamedTensor& p : params) {
        const Tensor* g = tape.param_grad(*p.tensor);
        const Tensor zeros(p.tensor->shape());
        const Tensor& analytic = g ? *g : zeros;
        for (std::size_t i : probe_indices(p.tensor->numel(), max_per_tensor)) {
            double& slot = (*p.tensor)[i];
            const double saved = slot;
            slot = saved + h;
            const double up = evaluate();
            slot = saved - h;
            const double down = evaluate();
            slot = saved;
            consider(report, analytic[i], (up - down) / (2.0 * h), floor, p.name + " [" + std::to_string(i) + "]");
        }
    }
    return report;
}

} // namespace dilvae
