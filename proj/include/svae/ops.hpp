#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "svae/tensor.hpp"

// Differentiable primitives. Binary elementwise operations broadcast with
// numpy rules (shapes right-aligned, extent-1 axes stretch). Every function
// records exact local gradients when any input lives on a tape.
namespace svae {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Throws DomainError when a divisor is zero.
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

Tensor exp(const Tensor& x);
/// Throws DomainError on non-positive input.
Tensor log(const Tensor& x);
/// ln(1 + e^x), computed without overflow.
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);
/// Gradient passes where lo <= x <= hi and is zero outside.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdims = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdims = false);
/// Sum over every axis except the leading (batch) axis; shape [B].
Tensor sum_per_sample(const Tensor& x);

Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor logsumexp_last(const Tensor& x, bool keepdims = false);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
/// out[r] = x[r, index[r]] over the flattened leading axes.
Tensor take_last(const Tensor& x, std::span<const std::size_t> index);

/// Which ends of a bin are open (extend to infinity).
enum class BinEdge : unsigned char { Interior, OpenBelow, OpenAbove };
enum class CdfFamily { Logistic, Normal };

/// ln(F(hi) - F(lo)) for a standard CDF F, elementwise. For OpenBelow the lo
/// argument is ignored (F(lo) = 0); for OpenAbove hi is ignored (F(hi) = 1).
/// Ignored arguments receive zero gradient.
Tensor interval_log_mass(CdfFamily family, const Tensor& lo, const Tensor& hi, std::span<const BinEdge> edges);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }
inline Tensor operator*(const Tensor& x, double c) { return scale(x, c); }
inline Tensor operator+(const Tensor& x, double c) { return add_scalar(x, c); }
inline Tensor operator-(const Tensor& x, double c) { return add_scalar(x, -c); }

namespace detail {
Shape broadcast_shape(const Shape& a, const Shape& b);
/// For every element of `to`, the offset of the element of `from` that
/// broadcasts onto it.
std::vector<std::size_t> broadcast_offsets(const Shape& from, const Shape& to);
}  // namespace detail

}  // namespace svae
