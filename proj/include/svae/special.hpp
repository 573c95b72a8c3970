#pragma once

#include <numbers>

// Scalar kernels shared by the tape primitives and the brute-force pmf
// tables of the discrete decoders.
namespace svae::special {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // ln sqrt(2 pi)

double softplus(double x);
double sigmoid(double x);
/// ln(1 - e^{-d}) for d > 0.
double log1mexp(double d);

double log_normal_pdf(double x);
/// ln Phi(x), accurate far into both tails.
double log_normal_cdf(double x);

double log_logistic_pdf(double x);
double log_logistic_cdf(double x);

struct IntervalMass {
  double log_mass;
  double d_lo;  // d log_mass / d lo
  double d_hi;  // d log_mass / d hi
};

/// ln(Phi(hi) - Phi(lo)) with derivatives; lo = -inf / hi = +inf via flags.
IntervalMass normal_interval(double lo, double hi, bool open_below, bool open_above);
/// Same for the standard logistic CDF.
IntervalMass logistic_interval(double lo, double hi, bool open_below, bool open_above);

}  // namespace svae::special
