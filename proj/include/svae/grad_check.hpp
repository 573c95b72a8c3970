#pragma once

#include <functional>
#include <span>
#include <vector>

#include "svae/tensor.hpp"

namespace svae {

/// Scalar function of a list of tensors, usable both on and off a tape.
using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

/// Reverse-mode gradients of `fn` at `params`.
std::vector<Tensor> autodiff_gradient(const ScalarFn& fn, std::span<const Tensor> params);

/// Central-difference gradients of `fn` at `params`.
std::vector<Tensor> numerical_gradient(const ScalarFn& fn, std::span<const Tensor> params, double eps);

/// max over elements of |a - f| / max(|a|, |f|, 1e-8).
double max_relative_error(std::span<const Tensor> analytic, std::span<const Tensor> numeric);

/// Compares backward() against central differences; reports, does not judge.
/// eps must lie in (0, 1e-3].
double grad_check(const ScalarFn& fn, std::span<const Tensor> params, double eps = 1e-6);

}  // namespace svae
