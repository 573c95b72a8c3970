#include "svae/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "svae/errors.hpp"

namespace svae {

std::vector<Tensor> autodiff_gradient(const ScalarFn& fn, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p.detach()));
  const Tensor loss = fn(leaves);
  return tape.backward(loss);
}

std::vector<Tensor> numerical_gradient(const ScalarFn& fn, std::span<const Tensor> params, double eps) {
  std::vector<Tensor> work;
  for (const auto& p : params) work.push_back(p.detach());
  std::vector<Tensor> grads;
  for (std::size_t k = 0; k < work.size(); ++k) {
    Tensor g(work[k].shape());
    auto gd = g.mutable_data();
    for (std::size_t i = 0; i < work[k].size(); ++i) {
      const double orig = work[k][i];
      work[k].mutable_data()[i] = orig + eps;
      const double up = fn(work).item();
      work[k].mutable_data()[i] = orig - eps;
      const double down = fn(work).item();
      work[k].mutable_data()[i] = orig;
      gd[i] = (up - down) / (2.0 * eps);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

double max_relative_error(std::span<const Tensor> analytic, std::span<const Tensor> numeric) {
  if (analytic.size() != numeric.size()) throw ContractViolation("gradient lists differ in length");
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    if (analytic[k].size() != numeric[k].size()) throw ContractViolation("gradient sizes differ");
    for (std::size_t i = 0; i < analytic[k].size(); ++i) {
      const double a = analytic[k][i];
      const double f = numeric[k][i];
      const double denom = std::max({std::abs(a), std::abs(f), 1e-8});
      worst = std::max(worst, std::abs(a - f) / denom);
    }
  }
  return worst;
}

double grad_check(const ScalarFn& fn, std::span<const Tensor> params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-3)) throw ContractViolation("grad_check eps must lie in (0, 1e-3]");
  const auto analytic = autodiff_gradient(fn, params);
  const auto numeric = numerical_gradient(fn, params, eps);
  return max_relative_error(analytic, numeric);
}

}  // namespace svae
