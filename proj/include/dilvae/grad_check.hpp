#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dilvae/tape.hpp"

namespace dilvae {

/// Worst coordinate found by a finite-difference comparison.
struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string where;  // "input 2 [17]" or the parameter name
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coordinates_checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps
/// near-zero gradients from turning round-off into huge ratios.
double relative_error(double analytic, double numeric, double floor);

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckFloor = 1e-3;

using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares tape gradients of f with central differences over every
/// coordinate of every input. f must be deterministic in its inputs.
/// Throws NumericError on non-finite values.
GradCheckReport grad_check(const ScalarFunction& f, std::vector<Tensor> inputs, double h = kGradCheckStep,
                           double floor = kGradCheckFloor);

struct NamedTensor {
    std::string name;
    Tensor* tensor;
};

/// Same check for a loss that reads model parameters through Tape::param.
/// Parameters are perturbed in place and restored. When `max_per_tensor`
/// is nonzero, only that many evenly spaced coordinates of each tensor are
/// probed.
GradCheckReport grad_check_params(const std::function<Var(Tape&)>& loss, std::span<const NamedTensor> params,
                                  double h = kGradCheckStep, double floor = kGradCheckFloor,
                                  std::size_t max_per_tensor = 0);

} // namespace dilvae
