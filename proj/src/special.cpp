#include "svae/special.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "svae/errors.hpp"

namespace svae::special {

namespace {

// 8-point Gauss-Legendre rule on [-1, 1].
constexpr std::array<double, 4> kGlNodes = {0.1834346424956498, 0.5255324099163290, 0.7966664774136267,
                                            0.9602898564975363};
constexpr std::array<double, 4> kGlWeights = {0.3626837833783620, 0.3137066458778873, 0.2223810344533745,
                                              0.1012285362903763};

double logsumexp2(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// ln of the integral of the standard normal density over [lo, hi] by
// quadrature; well conditioned for narrow intervals where differencing two
// CDF values would cancel.
double log_normal_mass_quadrature(double lo, double hi) {
  const double half = 0.5 * (hi - lo);
  const double mid = 0.5 * (hi + lo);
  double acc = -INFINITY;
  for (std::size_t i = 0; i < kGlNodes.size(); ++i) {
    const double lw = std::log(kGlWeights[i]);
    acc = logsumexp2(acc, lw + log_normal_pdf(mid + half * kGlNodes[i]));
    acc = logsumexp2(acc, lw + log_normal_pdf(mid - half * kGlNodes[i]));
  }
  return std::log(half) + acc;
}

using LogFn = double (*)(double);

IntervalMass interval(double lo, double hi, bool open_below, bool open_above, LogFn log_pdf, LogFn log_cdf,
                      double interior_log_mass) {
  IntervalMass r{0.0, 0.0, 0.0};
  if (open_below && open_above) return r;
  if (open_below) {
    r.log_mass = log_cdf(hi);
    r.d_hi = std::exp(log_pdf(hi) - r.log_mass);
    return r;
  }
  if (open_above) {
    r.log_mass = log_cdf(-lo);
    r.d_lo = -std::exp(log_pdf(lo) - r.log_mass);
    return r;
  }
  r.log_mass = interior_log_mass;
  r.d_hi = std::exp(log_pdf(hi) - r.log_mass);
  r.d_lo = -std::exp(log_pdf(lo) - r.log_mass);
  return r;
}

}  // namespace

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log1mexp(double d) {
  if (!(d > 0)) throw DomainError("log1mexp needs a positive argument");
  return d > std::numbers::ln2 ? std::log1p(-std::exp(-d)) : std::log(-std::expm1(-d));
}

double log_normal_pdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

double log_normal_cdf(double x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  if (x > 0) return std::log1p(-0.5 * std::erfc(x * kInvSqrt2));
  if (x > -37.0) return std::log(0.5 * std::erfc(-x * kInvSqrt2));
  // Asymptotic Mills-ratio series; erfc underflows past this point.
  const double r = 1.0 / (x * x);
  const double series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
  return log_normal_pdf(x) - std::log(-x) + std::log(series);
}

double log_logistic_pdf(double x) {
  const double a = std::abs(x);
  return -a - 2.0 * std::log1p(std::exp(-a));
}

double log_logistic_cdf(double x) { return -softplus(-x); }

IntervalMass normal_interval(double lo, double hi, bool open_below, bool open_above) {
  double interior = 0.0;
  if (!open_below && !open_above) {
    if (!(hi > lo)) throw DomainError("empty interval in normal_interval");
    const double width = hi - lo;
    if (width <= 1.0 && width * std::max({std::abs(lo), std::abs(hi), 1.0}) <= 2.0) {
      interior = log_normal_mass_quadrature(lo, hi);
    } else if (lo >= 0) {
      // Upper tail: Phi(hi) - Phi(lo) = Phi(-lo) - Phi(-hi).
      const double big = log_normal_cdf(-lo);
      interior = big + log1mexp(big - log_normal_cdf(-hi));
    } else {
      const double big = log_normal_cdf(hi);
      interior = big + log1mexp(big - log_normal_cdf(lo));
    }
  }
  return interval(lo, hi, open_below, open_above, log_normal_pdf, log_normal_cdf, interior);
}

IntervalMass logistic_interval(double lo, double hi, bool open_below, bool open_above) {
  double interior = 0.0;
  if (!open_below && !open_above) {
    if (!(hi > lo)) throw DomainError("empty interval in logistic_interval");
    // F(hi) - F(lo) = F(hi) (1 - F(lo)) (1 - e^{lo - hi})
    interior = -softplus(-hi) - softplus(lo) + log1mexp(hi - lo);
  }
  return interval(lo, hi, open_below, open_above, log_logistic_pdf, log_logistic_cdf, interior);
}

}  // namespace svae::special
