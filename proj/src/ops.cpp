#include "svae/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "svae/errors.hpp"
#include "svae/special.hpp"

namespace svae {

namespace detail {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ContractViolation("shapes " + to_string(a) + " and " + to_string(b) + " do not broadcast");
    }
    out[i] = ea == 1 ? eb : ea;
  }
  return out;
}

std::vector<std::size_t> broadcast_offsets(const Shape& from, const Shape& to) {
  const std::size_t r = to.size();
  if (from.size() > r) {
    throw ContractViolation("cannot broadcast " + to_string(from) + " to " + to_string(to));
  }
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = from.size(); i-- > 0;) {
    const std::size_t ti = i + (r - from.size());
    if (from[i] != 1) {
      if (from[i] != to[ti]) throw ContractViolation("cannot broadcast " + to_string(from) + " to " + to_string(to));
      stride[ti] = s;
    }
    s *= from[i];
  }
  const std::size_t n = num_elements(to);
  std::vector<std::size_t> out(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off += stride[d];
      if (idx[d] < to[d]) break;
      off -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return out;
}

}  // namespace detail

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// f(x) -> y, df(x, y) -> dy/dx
template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
  std::vector<double> out(x.size());
  const auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  Tensor y(x.shape(), std::move(out));
  if (!x.on_tape()) return y;
  return Tape::record(y, {&x}, [xv = x.values(), yv = y.values(), df](std::span<const double> g, Tape::InputGrads in) {
    auto& gx = *in[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

// f(a, b) -> y, da(a, b) -> dy/da, db(a, b) -> dy/db
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const Shape shape = detail::broadcast_shape(a.shape(), b.shape());
  std::vector<std::size_t> oa, ob;
  if (a.shape() != shape) oa = detail::broadcast_offsets(a.shape(), shape);
  if (b.shape() != shape) ob = detail::broadcast_offsets(b.shape(), shape);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(num_elements(shape));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = f(av[oa.empty() ? i : oa[i]], bv[ob.empty() ? i : ob[i]]);
  }
  Tensor y(shape, std::move(out));
  if (!a.on_tape() && !b.on_tape()) return y;
  return Tape::record(std::move(y), {&a, &b},
                      [avals = a.values(), bvals = b.values(), oa = std::move(oa), ob = std::move(ob), da, db](
                          std::span<const double> g, Tape::InputGrads in) {
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          const std::size_t ia = oa.empty() ? i : oa[i];
                          const std::size_t ib = ob.empty() ? i : ob[i];
                          if (in[0]) (*in[0])[ia] += g[i] * da(avals[ia], bvals[ib]);
                          if (in[1]) (*in[1])[ib] += g[i] * db(avals[ia], bvals[ib]);
                        }
                      });
}

std::vector<std::size_t> checked_axes(const Tensor& x, std::vector<std::size_t> axes) {
  std::sort(axes.begin(), axes.end());
  if (std::adjacent_find(axes.begin(), axes.end()) != axes.end()) throw ContractViolation("repeated reduction axis");
  for (auto ax : axes) {
    if (ax >= x.rank()) throw ContractViolation("reduction axis out of range for shape " + to_string(x.shape()));
  }
  return axes;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double p, double q) { return p + q; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double p, double q) { return p - q; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double p, double q) { return p * q; }, [](double, double q) { return q; },
      [](double p, double) { return p; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("division by zero");
  }
  return binary(
      a, b, [](double p, double q) { return p / q; }, [](double, double q) { return 1.0 / q; },
      [](double p, double q) { return -p / (q * q); });
}

Tensor neg(const Tensor& x) {
  return unary(x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor softplus(const Tensor& x) {
  return unary(x, special::softplus, [](double v, double) { return special::sigmoid(v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, special::sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v < 0.0 ? 0.0 : v; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ContractViolation("clamp with lo > hi");
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return v >= lo && v <= hi ? 1.0 : 0.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw ContractViolation("matmul shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.extent(0));
  const auto k = static_cast<Eigen::Index>(a.extent(1));
  const auto n = static_cast<Eigen::Index>(b.extent(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  Tensor y(Shape{a.extent(0), b.extent(1)}, std::move(out));
  if (!a.on_tape() && !b.on_tape()) return y;
  return Tape::record(std::move(y), {&a, &b},
                      [av = a.values(), bv = b.values(), m, k, n](std::span<const double> g, Tape::InputGrads in) {
                        const ConstMap gm(g.data(), m, n);
                        if (in[0]) MutMap(in[0]->data(), m, k).noalias() += gm * ConstMap(bv.data(), k, n).transpose();
                        if (in[1]) MutMap(in[1]->data(), k, n).noalias() += ConstMap(av.data(), m, k).transpose() * gm;
                      });
}

Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes_in, bool keepdims) {
  const auto axes = checked_axes(x, axes_in);
  Shape kept = x.shape();
  for (auto ax : axes) kept[ax] = 1;
  Shape out_shape;
  if (keepdims) {
    out_shape = kept;
  } else {
    for (std::size_t d = 0; d < x.rank(); ++d) {
      if (!std::binary_search(axes.begin(), axes.end(), d)) out_shape.push_back(x.extent(d));
    }
  }
  auto offsets = detail::broadcast_offsets(kept, x.shape());
  std::vector<double> out(num_elements(kept), 0.0);
  const auto xs = x.data();
  for (std::size_t i = 0; i < xs.size(); ++i) out[offsets[i]] += xs[i];
  Tensor y(std::move(out_shape), std::move(out));
  if (!x.on_tape()) return y;
  return Tape::record(std::move(y), {&x}, [offsets = std::move(offsets)](std::span<const double> g, Tape::InputGrads in) {
    auto& gx = *in[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[offsets[i]];
  });
}

Tensor sum(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  for (std::size_t d = 0; d < axes.size(); ++d) axes[d] = d;
  return sum(x, axes, false);
}

Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdims) {
  std::size_t count = 1;
  for (auto ax : checked_axes(x, axes)) count *= x.extent(ax);
  if (count == 0) throw ContractViolation("mean over an empty axis");
  return scale(sum(x, axes, keepdims), 1.0 / static_cast<double>(count));
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ContractViolation("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor sum_per_sample(const Tensor& x) {
  if (x.rank() == 0) throw ContractViolation("sum_per_sample needs a batch axis");
  std::vector<std::size_t> axes;
  for (std::size_t d = 1; d < x.rank(); ++d) axes.push_back(d);
  if (axes.empty()) return x;
  return sum(x, axes, false);
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (detail::broadcast_shape(x.shape(), shape) != shape) {
    throw ContractViolation("cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
  }
  auto offsets = detail::broadcast_offsets(x.shape(), shape);
  std::vector<double> out(offsets.size());
  const auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[offsets[i]];
  Tensor y(shape, std::move(out));
  if (!x.on_tape()) return y;
  return Tape::record(std::move(y), {&x}, [offsets = std::move(offsets)](std::span<const double> g, Tape::InputGrads in) {
    auto& gx = *in[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[offsets[i]] += g[i];
  });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (num_elements(shape) != x.size()) {
    throw ContractViolation("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  Tensor y(shape, x.values());
  if (!x.on_tape()) return y;
  return Tape::record(std::move(y), {&x}, [](std::span<const double> g, Tape::InputGrads in) {
    auto& gx = *in[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor logsumexp_last(const Tensor& x, bool keepdims) {
  if (x.rank() == 0 || x.shape().back() == 0) throw ContractViolation("logsumexp_last needs a non-empty last axis");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  Shape out_shape = x.shape();
  if (keepdims) {
    out_shape.back() = 1;
  } else {
    out_shape.pop_back();
  }
  const auto xs = x.data();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xs.data() + r * n;
    const double m = *std::max_element(row, row + n);
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += std::exp(row[j] - m);
    out[r] = m + std::log(acc);
  }
  Tensor y(std::move(out_shape), out);
  if (!x.on_tape()) return y;
  return Tape::record(std::move(y), {&x},
                      [xv = x.values(), lse = std::move(out), n](std::span<const double> g, Tape::InputGrads in) {
                        auto& gx = *in[0];
                        for (std::size_t r = 0; r < lse.size(); ++r) {
                          for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[r] * std::exp(xv[r * n + j] - lse[r]);
                        }
                      });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractViolation("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ContractViolation("concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw ContractViolation("concat rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && p.extent(d) != first[d]) throw ContractViolation("concat extent mismatch");
    }
    out_shape[axis] += p.extent(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_chunk = out_shape[axis] * inner;

  std::vector<double> out(num_elements(out_shape));
  std::vector<std::size_t> chunk_offsets;
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.extent(axis) * inner;
    chunk_offsets.push_back(col);
    const auto ps = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(ps.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * out_chunk + col));
    }
    col += chunk;
  }
  Tensor y(std::move(out_shape), std::move(out));
  std::vector<const Tensor*> inputs;
  std::vector<std::size_t> chunks;
  for (const auto& p : parts) {
    inputs.push_back(&p);
    chunks.push_back(p.extent(axis) * inner);
  }
  return Tape::record(std::move(y), inputs,
                      [chunk_offsets, chunks, outer, out_chunk](std::span<const double> g, Tape::InputGrads in) {
                        for (std::size_t k = 0; k < in.size(); ++k) {
                          if (!in[k]) continue;
                          auto& gk = *in[k];
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t j = 0; j < chunks[k]; ++j) {
                              gk[o * chunks[k] + j] += g[o * out_chunk + chunk_offsets[k] + j];
                            }
                          }
                        }
                      });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin > end || end > x.extent(axis)) {
    throw ContractViolation("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                            to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.extent(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.extent(d);
  const std::size_t in_chunk = x.extent(axis) * inner;
  const std::size_t out_chunk = (end - begin) * inner;
  const std::size_t start = begin * inner;
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  std::vector<double> out(outer * out_chunk);
  const auto xs = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(o * in_chunk + start), out_chunk,
                out.begin() + static_cast<std::ptrdiff_t>(o * out_chunk));
  }
  Tensor y(std::move(out_shape), std::move(out));
  if (!x.on_tape()) return y;
  return Tape::record(std::move(y), {&x},
                      [outer, in_chunk, out_chunk, start](std::span<const double> g, Tape::InputGrads in) {
                        auto& gx = *in[0];
                        for (std::size_t o = 0; o < outer; ++o) {
                          for (std::size_t j = 0; j < out_chunk; ++j) gx[o * in_chunk + start + j] += g[o * out_chunk + j];
                        }
                      });
}

Tensor take_last(const Tensor& x, std::span<const std::size_t> index) {
  if (x.rank() == 0) throw ContractViolation("take_last needs at least one axis");
  const std::size_t n = x.shape().back();
  const std::size_t rows = n == 0 ? 0 : x.size() / n;
  if (index.size() != rows) throw ContractViolation("take_last index count does not match leading extent");
  Shape out_shape = x.shape();
  out_shape.pop_back();
  std::vector<double> out(rows);
  std::vector<std::size_t> flat(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= n) throw ContractViolation("take_last index " + std::to_string(index[r]) + " out of range");
    flat[r] = r * n + index[r];
    out[r] = x[flat[r]];
  }
  Tensor y(std::move(out_shape), std::move(out));
  if (!x.on_tape()) return y;
  return Tape::record(std::move(y), {&x}, [flat = std::move(flat)](std::span<const double> g, Tape::InputGrads in) {
    auto& gx = *in[0];
    for (std::size_t r = 0; r < flat.size(); ++r) gx[flat[r]] += g[r];
  });
}

Tensor interval_log_mass(CdfFamily family, const Tensor& lo, const Tensor& hi, std::span<const BinEdge> edges) {
  if (lo.shape() != hi.shape() || edges.size() != lo.size()) {
    throw ContractViolation("interval_log_mass needs equally shaped bounds and one edge flag per element");
  }
  const std::size_t n = lo.size();
  std::vector<double> out(n), d_lo(n), d_hi(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool below = edges[i] == BinEdge::OpenBelow;
    const bool above = edges[i] == BinEdge::OpenAbove;
    const auto r = family == CdfFamily::Normal ? special::normal_interval(lo[i], hi[i], below, above)
                                               : special::logistic_interval(lo[i], hi[i], below, above);
    out[i] = r.log_mass;
    d_lo[i] = r.d_lo;
    d_hi[i] = r.d_hi;
  }
  Tensor y(lo.shape(), std::move(out));
  if (!lo.on_tape() && !hi.on_tape()) return y;
  return Tape::record(std::move(y), {&lo, &hi},
                      [d_lo = std::move(d_lo), d_hi = std::move(d_hi)](std::span<const double> g, Tape::InputGrads in) {
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          if (in[0]) (*in[0])[i] += g[i] * d_lo[i];
                          if (in[1]) (*in[1])[i] += g[i] * d_hi[i];
                        }
                      });
}

}  // namespace svae
