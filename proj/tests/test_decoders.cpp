#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "svae/decoders.hpp"
#include "svae/errors.hpp"
#include "svae/grad_check.hpp"
#include "svae/ops.hpp"
#include "test_support.hpp"

using namespace svae;
using svae::test::random_bytes;
using svae::test::random_tensor;

namespace {

constexpr double kLn256 = 5.545177444479562;
constexpr double kHalfLog2Pi = 0.9189385332046727;

double brute_gaussian_nll(const Tensor& x, const Tensor& mean, double lambda) {
  double s = 0.0;
  const double sigma = std::exp(lambda);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = (x[i] - mean[i]) / sigma;
    s += -std::log(std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI)));
  }
  return s;
}

// Mass of byte k under N(mu, sigma^2) with open edge bins, via erfc.
double gaussian_bin_mass(double mu, double sigma, int k) {
  const double lo = (k / 255.0 - 1.0 / 510.0 - mu) / sigma;
  const double hi = (k / 255.0 + 1.0 / 510.0 - mu) / sigma;
  const double upper = k == 255 ? 1.0 : svae::test::phi_cdf(hi);
  const double lower = k == 0 ? 0.0 : svae::test::phi_cdf(lo);
  return upper - lower;
}

double logistic_cdf(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logistic_bin_mass(double mu, double s, int k) {
  const double lo = (k / 255.0 - 1.0 / 510.0 - mu) / s;
  const double hi = (k / 255.0 + 1.0 / 510.0 - mu) / s;
  return (k == 255 ? 1.0 : logistic_cdf(hi)) - (k == 0 ? 0.0 : logistic_cdf(lo));
}

DecoderParams random_params(const DecoderSpec& spec, Rng& rng, const Shape& data_shape) {
  DecoderParams p;
  auto with_last = [&](std::size_t n) {
    Shape s = data_shape;
    s.push_back(n);
    return s;
  };
  switch (spec.variant) {
    case DecoderVariant::Categorical256:
      p.logits = random_tensor(rng, with_last(256), -3.0, 3.0);
      break;
    case DecoderVariant::BitwiseCategorical:
      p.logits = random_tensor(rng, with_last(8), -3.0, 3.0);
      break;
    case DecoderVariant::DiscretizedLogisticMixture:
      p.logits = random_tensor(rng, with_last(spec.mixture_components), -2.0, 2.0);
      p.component_means = random_tensor(rng, with_last(spec.mixture_components), -0.2, 1.2);
      p.component_log_scales = random_tensor(rng, with_last(spec.mixture_components), -8.0, 1.0);
      break;
    default:
      p.mean = random_tensor(rng, data_shape, -0.2, 1.2);
      p.log_sigma = random_tensor(rng, data_shape, -7.0, 1.0);
      break;
  }
  return p;
}

}  // namespace

TEST(SharingScheme, PresetsAndCounts) {
  EXPECT_EQ(SharingScheme::shared().variance_parameter_count(3, 4, 5), 1u);
  EXPECT_EQ(SharingScheme::per_image().variance_parameter_count(3, 4, 5), 1u);
  EXPECT_EQ(SharingScheme::per_pixel().variance_parameter_count(3, 4, 5), 60u);
  EXPECT_EQ(SharingScheme::per_location().variance_parameter_count(3, 4, 5), 60u);
  EXPECT_EQ(SharingScheme::per_channel().variance_parameter_count(3, 4, 5), 3u);
  EXPECT_EQ(SharingScheme::per_row().variance_parameter_count(3, 4, 5), 4u);
  EXPECT_EQ(SharingScheme::per_column().variance_parameter_count(3, 4, 5), 5u);
  EXPECT_FALSE(SharingScheme::per_pixel().pools(PoolAxis::Batch));
  EXPECT_TRUE(SharingScheme::shared().pools(PoolAxis::Batch));
}

TEST(SharingScheme, ParseRoundTrip) {
  for (unsigned mask = 0; mask < 16; ++mask) {
    const auto s = SharingScheme::from_mask(mask);
    EXPECT_EQ(SharingScheme::parse(s.name()), s) << s.name();
  }
  EXPECT_EQ(SharingScheme::parse("pool:batch+row").mask(), 0x5u);
  EXPECT_EQ(SharingScheme::parse("pool:none"), SharingScheme::per_pixel());
  EXPECT_THROW(SharingScheme::parse("pool:depth"), ContractViolation);
  EXPECT_THROW(SharingScheme::parse("everything"), ContractViolation);
  EXPECT_THROW(SharingScheme::from_mask(16), ContractViolation);
}

TEST(DecoderSpec, Validation) {
  EXPECT_NO_THROW(DecoderSpec::make(DecoderVariant::OptimalSigma).validate());
  EXPECT_NO_THROW(DecoderSpec::make(DecoderVariant::Bernoulli).validate());
  EXPECT_THROW(DecoderSpec::make(DecoderVariant::Bernoulli, SharingScheme::shared()).validate(), ContractViolation);
  DecoderSpec bad = DecoderSpec::make(DecoderVariant::SharedSigma);
  bad.clip = {0.0, -1.0};
  EXPECT_THROW(bad.validate(), ContractViolation);
  EXPECT_EQ(parse_decoder_variant("categorical256"), DecoderVariant::Categorical256);
  EXPECT_THROW(parse_decoder_variant("poisson"), ContractViolation);
  EXPECT_EQ(DecoderSpec::make(DecoderVariant::PerPixelSigma).head_multiplier(), 2u);
  EXPECT_EQ(DecoderSpec::make(DecoderVariant::DiscretizedLogisticMixture).head_multiplier(), 15u);
}

TEST(GaussianNll, ZeroResidualConstant) {
  Tensor x({1, 2}, std::vector<double>{0.3, 0.7});
  EXPECT_NEAR(gaussian_nll(x, x, Tensor::scalar(0.0)).item(), 1.8378770664093453, 1e-12);
}

TEST(GaussianNll, SingleElement) {
  Tensor x({1, 1}, 0.5);
  Tensor m({1, 1}, 0.0);
  const double v = gaussian_nll(x, m, Tensor::scalar(std::log(0.5))).item();
  EXPECT_NEAR(v, 0.725791352644727, 1e-12);
  EXPECT_NEAR(v, brute_gaussian_nll(x, m, std::log(0.5)), 1e-12);
}

TEST(GaussianNll, SharedLambdaFourElements) {
  Tensor x({1, 4}, 0.5);
  Tensor m({1, 4}, 0.0);
  const double v = gaussian_nll(x, m, Tensor::scalar(std::log(0.5))).item();
  EXPECT_NEAR(v, 4 * std::log(0.5) + 1.0 / (2 * 0.25) + 4 * kHalfLog2Pi, 1e-12);
  EXPECT_NEAR(v, 2.903165, 1e-5);
}

TEST(GaussianNll, MatchesBruteForce) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    Tensor x = random_tensor(rng, {1, 6}, 0.0, 1.0);
    Tensor m = random_tensor(rng, {1, 6}, 0.0, 1.0);
    const double lambda = -3.0 * rng.uniform();
    EXPECT_NEAR(gaussian_nll(x, m, Tensor::scalar(lambda)).item(), brute_gaussian_nll(x, m, lambda), 1e-10);
  }
  EXPECT_THROW(gaussian_nll(Tensor({1, 2}), Tensor({1, 3}), Tensor::scalar(0.0)), ContractViolation);
}

TEST(SoftClip, Saturation) {
  const ClipBounds b{-6.0, 0.0};
  EXPECT_NEAR(soft_clip(Tensor::scalar(100.0), b).item(), std::log1p(std::exp(6.0)) - 6.0, 1e-12);
  EXPECT_NEAR(soft_clip(Tensor::scalar(100.0), b).item(), 0.00248, 1e-5);
  EXPECT_NEAR(soft_clip(Tensor::scalar(-100.0), b).item(), -6.0, 1e-9);
  const double upper = -std::log1p(std::exp(3.0));
  EXPECT_NEAR(soft_clip(Tensor::scalar(-3.0), b).item(), std::log1p(std::exp(upper + 6.0)) - 6.0, 1e-12);
  EXPECT_NEAR(soft_clip(Tensor::scalar(-3.0), b).item(), -2.9975, 2e-4);
}

TEST(SoftClip, MonotoneAndBoundedProperty) {
  const ClipBounds b{-6.0, 0.0};
  Rng rng(2);
  Tensor x = random_tensor(rng, {500}, -50.0, 50.0);
  std::sort(x.mutable_data().begin(), x.mutable_data().end());
  Tensor y = soft_clip(x, b);
  for (std::size_t i = 0; i < y.size(); ++i) {
    EXPECT_GE(y[i], -6.0);
    EXPECT_LT(y[i], 0.0025);
    if (i > 0) {
      EXPECT_GE(y[i], y[i - 1]);
    }
  }
  Tensor inner = random_tensor(rng, {200}, -9.0, -3.0);
  Tensor clipped = soft_clip(inner, ClipBounds{-12.0, 0.0});
  for (std::size_t i = 0; i < inner.size(); ++i) EXPECT_LT(std::abs(clipped[i] - inner[i]), 0.05);
}

TEST(OptimalSigma, PerfectReconstructionClampsToMin) {
  Tensor x({2, 1, 2, 2}, 0.4);
  Tensor l = optimal_log_sigma(x, x, SharingScheme::shared(), {});
  EXPECT_DOUBLE_EQ(l.item(), -6.0);
}

TEST(OptimalSigma, FullySharedTwoValues) {
  Tensor x({1, 1, 1, 2}, std::vector<double>{0.0, 1.0});
  Tensor m({1, 1, 1, 2}, 0.0);
  EXPECT_NEAR(optimal_log_sigma(x, m, SharingScheme::shared(), {-6.0, 2.0}).item(), -0.34657359027997264, 1e-14);
}

TEST(OptimalSigma, PerImageGroups) {
  Tensor x({2, 1, 1, 2}, std::vector<double>{0.5, -0.5, 1.0, 1.0});
  Tensor m({2, 1, 1, 2}, 0.0);
  Tensor l = optimal_log_sigma(x, m, SharingScheme::per_image(), {});
  ASSERT_EQ(l.shape(), (Shape{2, 1, 1, 1}));
  EXPECT_NEAR(l[0], -0.6931471805599453, 1e-14);
  EXPECT_NEAR(l[1], 0.0, 1e-14);
}

TEST(OptimalSigma, HardClampAtUpperBound) {
  Tensor x({1, 1, 1, 1}, 10.0);
  Tensor m({1, 1, 1, 1}, 0.0);
  EXPECT_DOUBLE_EQ(optimal_log_sigma(x, m, SharingScheme::shared(), {}).item(), 0.0);
  EXPECT_THROW(optimal_log_sigma(Tensor({2, 3}), Tensor({2, 3}), SharingScheme::shared(), {}), ContractViolation);
  EXPECT_THROW(optimal_log_sigma(Tensor({0, 1, 1, 1}), Tensor({0, 1, 1, 1}), SharingScheme::shared(), {}),
               ContractViolation);
}

// Grid argmax of the group likelihood over 2000 log-spaced sigmas.
TEST(OptimalSigma, MatchesGridSearchForEveryScheme) {
  Rng rng(3);
  for (unsigned mask = 0; mask < 16; ++mask) {
    const auto scheme = SharingScheme::from_mask(mask);
    for (int t = 0; t < 5; ++t) {
      Tensor x = random_tensor(rng, {3, 2, 2, 3}, 0.0, 1.0);
      Tensor m = random_tensor(rng, {3, 2, 2, 3}, 0.0, 1.0);
      const ClipBounds b{-6.0, 0.0};
      Tensor l = optimal_log_sigma(x, m, scheme, b);
      Tensor l_bcast = broadcast_to(l, x.shape());
      // Each element's group is identified by its optimal value's offset.
      const auto offs = detail::broadcast_offsets(l.shape(), x.shape());
      for (std::size_t g = 0; g < l.size(); ++g) {
        double best = -INFINITY, best_sigma = 0.0;
        for (int k = 0; k < 2000; ++k) {
          const double sigma = std::exp(-6.0 + 6.0 * k / 1999.0);
          double ll = 0.0;
          for (std::size_t i = 0; i < x.size(); ++i) {
            if (offs[i] != g) continue;
            const double r = x[i] - m[i];
            ll += -std::log(sigma) - r * r / (2 * sigma * sigma);
          }
          if (ll > best) {
            best = ll;
            best_sigma = sigma;
          }
        }
        EXPECT_LT(std::abs(std::exp(l[g]) / best_sigma - 1.0), 0.005) << scheme.name();
      }
    }
  }
}

TEST(OptimalSigma, StopsGradients) {
  Tape tape;
  Tensor m = tape.leaf(Tensor({1, 1, 1, 2}, 0.2));
  Tensor l = optimal_log_sigma(Tensor({1, 1, 1, 2}, 0.5), m, SharingScheme::shared(), {});
  EXPECT_FALSE(l.on_tape());
}

TEST(Bernoulli, Examples) {
  EXPECT_NEAR(bernoulli_nll(Tensor({1, 1}, 0.5), Tensor({1, 1}, 0.5)).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(bernoulli_nll(Tensor({1, 1}, 0.9), Tensor({1, 1}, 1.0)).item(), 0.10536051565782628, 1e-12);
  Rng rng(4);
  Tensor x = random_tensor(rng, {2, 5}, 0.01, 0.99);
  Tensor nll = bernoulli_nll(x, x);
  for (std::size_t b = 0; b < 2; ++b) {
    double h = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      const double p = x[b * 5 + i];
      h += -p * std::log(p) - (1 - p) * std::log(1 - p);
    }
    EXPECT_NEAR(nll[b], h, 1e-12);
  }
}

TEST(Bernoulli, ClampedProbabilitiesStayFinite) {
  const double v = bernoulli_nll(Tensor({1, 1}, 0.0), Tensor({1, 1}, 1.0)).item();
  EXPECT_NEAR(v, -std::log(kBernoulliEps), 1e-9);
}

TEST(Categorical, UniformLogits) {
  Tensor logits({1, 3, 256}, 0.0);
  Tensor bytes({1, 3}, std::vector<double>{0, 100, 255});
  EXPECT_NEAR(categorical_nll(logits, bytes).item(), 3 * kLn256, 1e-12);
}

TEST(Categorical, NearDelta) {
  Tensor logits({1, 1, 256}, 0.0);
  logits.mutable_data()[42] = 20.0;
  const double v = categorical_nll(logits, Tensor({1, 1}, 42.0)).item();
  EXPECT_LT(v, 1e-6);
  EXPECT_NEAR(v, std::log1p(255 * std::exp(-20.0)), 1e-13);
}

TEST(Categorical, MatchesSoftmaxBruteForce) {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    Tensor logits = random_tensor(rng, {2, 2, 256}, -4.0, 4.0);
    Tensor bytes = random_bytes(rng, {2, 2});
    Tensor nll = categorical_nll(logits, bytes);
    for (std::size_t b = 0; b < 2; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < 2; ++i) {
        const double* row = logits.data().data() + (b * 2 + i) * 256;
        double z = 0.0;
        for (int k = 0; k < 256; ++k) z += std::exp(row[k]);
        s += -std::log(std::exp(row[static_cast<int>(bytes[b * 2 + i])]) / z);
      }
      EXPECT_NEAR(nll[b], s, 1e-10);
    }
  }
}

TEST(Categorical, RejectsBadBytes) {
  Tensor logits({1, 1, 256}, 0.0);
  EXPECT_THROW(categorical_nll(logits, Tensor({1, 1}, 256.0)), ContractViolation);
  EXPECT_THROW(categorical_nll(logits, Tensor({1, 1}, 1.5)), ContractViolation);
  EXPECT_THROW(categorical_nll(logits, Tensor({1, 1}, -1.0)), ContractViolation);
  EXPECT_THROW(categorical_nll(Tensor({1, 1, 8}), Tensor({1, 1}, 0.0)), ContractViolation);
}

TEST(BitwiseCategorical, Examples) {
  Tensor zero({1, 1, 8}, 0.0);
  EXPECT_NEAR(bitwise_categorical_nll(zero, Tensor({1, 1}, 77.0)).item(), 8 * std::log(2.0), 1e-12);
  Tensor l({1, 1, 8}, std::log(0.9 / 0.1));
  EXPECT_NEAR(bitwise_categorical_nll(l, Tensor({1, 1}, 255.0)).item(), -8 * std::log(0.9), 1e-12);
}

TEST(BitwiseCategorical, MostSignificantBitFirst) {
  Tensor l({1, 1, 8}, 0.0);
  l.mutable_data()[0] = 30.0;  // first bit almost surely set
  EXPECT_LT(bitwise_categorical_nll(l, Tensor({1, 1}, 128.0)).item(), 7 * std::log(2.0) + 1e-9);
  EXPECT_GT(bitwise_categorical_nll(l, Tensor({1, 1}, 1.0)).item(), 30.0);
}

TEST(LogisticMixture, IdenticalComponentsCollapse) {
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    Tensor bytes = random_bytes(rng, {1, 4});
    Tensor mu1 = random_tensor(rng, {1, 4, 1}, 0.0, 1.0);
    Tensor ls1 = random_tensor(rng, {1, 4, 1}, -5.0, 0.0);
    const double single = discretized_logistic_mixture_nll(mu1, ls1, Tensor({1, 4, 1}, 0.0), bytes).item();
    std::vector<Tensor> mu_parts{mu1, mu1}, ls_parts{ls1, ls1};
    Tensor weights = random_tensor(rng, {1, 4, 2}, -3.0, 3.0);
    const double pair =
        discretized_logistic_mixture_nll(concat(mu_parts, 2), concat(ls_parts, 2), weights, bytes).item();
    EXPECT_NEAR(pair, single, 1e-12 * std::max(1.0, std::abs(single)));
  }
}

TEST(LogisticMixture, MatchesClosedFormBins) {
  Rng rng(7);
  for (int t = 0; t < 10; ++t) {
    Tensor bytes = random_bytes(rng, {1, 3});
    bytes.mutable_data()[0] = 0.0;
    bytes.mutable_data()[1] = 255.0;
    Tensor mu = random_tensor(rng, {1, 3, 3}, 0.0, 1.0);
    Tensor ls = random_tensor(rng, {1, 3, 3}, -4.0, -1.0);
    Tensor w = random_tensor(rng, {1, 3, 3}, -1.0, 1.0);
    double expected = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      double z = 0.0, p = 0.0;
      for (std::size_t c = 0; c < 3; ++c) z += std::exp(w[i * 3 + c]);
      for (std::size_t c = 0; c < 3; ++c) {
        p += std::exp(w[i * 3 + c]) / z *
             logistic_bin_mass(mu[i * 3 + c], std::exp(ls[i * 3 + c]), static_cast<int>(bytes[i]));
      }
      expected -= std::log(p);
    }
    EXPECT_NEAR(discretized_logistic_mixture_nll(mu, ls, w, bytes).item(), expected, 1e-9);
  }
}

// With open edge bins the two outermost bins absorb the tails, so a very wide
// component is not uniform over the 256 levels: interior bins flatten out
// while the edge bins approach one half each.
TEST(LogisticMixture, VeryWideComponentSendsMassToEdgeBins) {
  DecoderSpec spec = DecoderSpec::make(DecoderVariant::DiscretizedLogisticMixture);
  spec.mixture_components = 1;
  DecoderParams p;
  p.component_means = Tensor({1, 1, 1}, 0.5);
  p.component_log_scales = Tensor({1, 1, 1}, std::log(1e4));
  p.logits = Tensor({1, 1, 1}, 0.0);
  Tensor table = log_pmf_table(spec, p);
  EXPECT_NEAR(std::exp(table[0]), 0.5, 1e-4);
  EXPECT_NEAR(std::exp(table[255]), 0.5, 1e-4);
  EXPECT_NEAR(table[1], table[128], 1e-6);
  EXPECT_GT(-table[128], kLn256);
}

TEST(DiscretizedGaussian, ModalBinAtUnitHalfWidth) {
  Tensor mean({1, 1}, 100.0 / 255.0);
  const double nll = discretized_gaussian_nll(mean, Tensor::scalar(std::log(1.0 / 510.0)), Tensor({1, 1}, 100.0)).item();
  EXPECT_NEAR(std::exp(-nll), 0.6826894921370859, 1e-10);
}

TEST(DiscretizedGaussian, MatchesErfcBins) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    Tensor bytes = random_bytes(rng, {1, 4});
    bytes.mutable_data()[0] = 0.0;
    bytes.mutable_data()[3] = 255.0;
    const double lambda = -4.0 + 3.0 * rng.uniform();
    Tensor mean({1, 4});
    for (std::size_t i = 0; i < 4; ++i) mean.mutable_data()[i] = bytes[i] / 255.0 + 2.0 * (rng.uniform() - 0.5) * std::exp(lambda);
    double expected = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      expected -= std::log(gaussian_bin_mass(mean[i], std::exp(lambda), static_cast<int>(bytes[i])));
    }
    const double got = discretized_gaussian_nll(mean, Tensor::scalar(lambda), bytes).item();
    EXPECT_NEAR(got, expected, 1e-8 * std::max(1.0, std::abs(expected)));
  }
}

TEST(DiscretizedGaussian, VeryWideGaussianSendsMassToEdgeBins) {
  DecoderSpec spec = DecoderSpec::make(DecoderVariant::DiscretizedGaussian);
  DecoderParams p;
  p.mean = Tensor({1, 1}, 0.5);
  p.log_sigma = Tensor({1, 1}, std::log(1e4));
  Tensor table = log_pmf_table(spec, p);
  EXPECT_NEAR(std::exp(table[0]), 0.5, 1e-4);
  EXPECT_NEAR(std::exp(table[255]), 0.5, 1e-4);
  EXPECT_NEAR(table[1], table[200], 1e-6);
}

TEST(DiscreteNll, GaussianVariantsUseDiscretizedGaussian) {
  Rng rng(9);
  Tensor bytes = random_bytes(rng, {2, 3});
  DecoderParams p;
  p.mean = random_tensor(rng, {2, 3}, 0.0, 1.0);
  p.log_sigma = Tensor({1, 1}, -2.0);
  const Tensor a = discrete_nll(DecoderSpec::make(DecoderVariant::SharedSigma), p, bytes);
  const Tensor b = discretized_gaussian_nll(*p.mean, *p.log_sigma, bytes);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_THROW(discrete_nll(DecoderSpec::make(DecoderVariant::Bernoulli), p, bytes), ContractViolation);
}

// Table entries must agree with the differentiable NLLs on the observed byte.
TEST(LogPmfTable, AgreesWithNll) {
  Rng rng(10);
  for (auto v : {DecoderVariant::Categorical256, DecoderVariant::BitwiseCategorical,
                 DecoderVariant::DiscretizedLogisticMixture, DecoderVariant::DiscretizedGaussian}) {
    const auto spec = DecoderSpec::make(v);
    for (int t = 0; t < 5; ++t) {
      DecoderParams p = random_params(spec, rng, {1, 3});
      Tensor bytes = random_bytes(rng, {1, 3});
      Tensor table = log_pmf_table(spec, p);
      double expected = 0.0;
      for (std::size_t i = 0; i < 3; ++i) expected -= table[i * 256 + static_cast<std::size_t>(bytes[i])];
      EXPECT_NEAR(discrete_nll(spec, p, bytes).item(), expected, 1e-9 * std::max(1.0, std::abs(expected)))
          << to_string(v);
    }
  }
}

TEST(LogPmfTable, NormalizedProperty) {
  Rng rng(11);
  for (auto v : {DecoderVariant::Categorical256, DecoderVariant::BitwiseCategorical,
                 DecoderVariant::DiscretizedLogisticMixture, DecoderVariant::DiscretizedGaussian,
                 DecoderVariant::OptimalSigma}) {
    const auto spec = DecoderSpec::make(v);
    for (int t = 0; t < 10; ++t) {
      Tensor table = log_pmf_table(spec, random_params(spec, rng, {2, 2}));
      for (std::size_t r = 0; r < 4; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < 256; ++k) s += std::exp(table[r * 256 + k]);
        EXPECT_NEAR(s, 1.0, 1e-9) << to_string(v);
      }
    }
  }
}

TEST(DecoderSample, GaussianMeanModeReturnsMean) {
  Rng rng(12);
  DecoderParams p;
  p.mean = random_tensor(rng, {2, 3}, 0.0, 1.0);
  p.log_sigma = Tensor::scalar(-1.0);
  Tensor out = decoder_sample(DecoderSpec::make(DecoderVariant::SharedSigma), p, rng, SampleMode::Mean);
  EXPECT_EQ(out.values(), p.mean->values());
  Tensor drawn = decoder_sample(DecoderSpec::make(DecoderVariant::SharedSigma), p, rng, SampleMode::Sample);
  for (double d : drawn.data()) {
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
  }
}

TEST(DecoderSample, CategoricalOneHot) {
  DecoderParams p;
  Tensor logits({1, 1, 256}, -1000.0);
  logits.mutable_data()[17] = 0.0;
  p.logits = logits;
  const auto spec = DecoderSpec::make(DecoderVariant::Categorical256);
  Rng rng(13);
  EXPECT_DOUBLE_EQ(decoder_sample(spec, p, rng, SampleMode::Mean).item(), 17.0 / 255.0);
  EXPECT_DOUBLE_EQ(decoder_sample(spec, p, rng, SampleMode::Sample).item(), 17.0 / 255.0);
}

TEST(DecoderSample, BernoulliDrawsAreBinary) {
  DecoderParams p;
  p.mean = Tensor({1, 100}, 0.3);
  Rng rng(14);
  Tensor s = decoder_sample(DecoderSpec::make(DecoderVariant::Bernoulli), p, rng, SampleMode::Sample);
  double ones = 0.0;
  for (double d : s.data()) {
    EXPECT_TRUE(d == 0.0 || d == 1.0);
    ones += d;
  }
  EXPECT_GT(ones, 10.0);
  EXPECT_LT(ones, 55.0);
}

TEST(DecoderSample, DiscreteDrawsFollowTable) {
  DecoderParams p;
  Tensor logits({1, 4000, 256}, -1000.0);
  for (std::size_t r = 0; r < 4000; ++r) {
    logits.mutable_data()[r * 256 + 10] = 0.0;
    logits.mutable_data()[r * 256 + 20] = std::log(3.0);
  }
  p.logits = logits;
  Rng rng(15);
  Tensor s = decoder_sample(DecoderSpec::make(DecoderVariant::Categorical256), p, rng, SampleMode::Sample);
  double frac = 0.0;
  for (double d : s.data()) frac += d == 20.0 / 255.0 ? 1.0 : 0.0;
  EXPECT_NEAR(frac / 4000.0, 0.75, 0.03);
}

// Gradients of every NLL against central differences on small random inputs.
// Components near zero are compared on an absolute scale, since the
// difference quotient carries round-off of order ulp(loss) / eps.
TEST(DecoderGradients, AllLikelihoodsProperty) {
  Rng rng(16);
  for (int t = 0; t < 10; ++t) {
    Tensor x = random_tensor(rng, {2, 3}, 0.0, 1.0);
    Tensor bytes = random_bytes(rng, {2, 3});
    std::vector<std::pair<const char*, std::pair<ScalarFn, std::vector<Tensor>>>> cases;
    cases.push_back({"shared", {[&](std::span<const Tensor> p) { return sum(gaussian_nll(x, p[0], p[1])); },
                                {random_tensor(rng, {2, 3}, -2, 2), random_tensor(rng, {1, 1}, -2, 2)}}});
    cases.push_back({"per_pixel", {[&](std::span<const Tensor> p) { return sum(gaussian_nll(x, p[0], p[1])); },
                                   {random_tensor(rng, {2, 3}, -2, 2), random_tensor(rng, {2, 3}, -2, 2)}}});
    cases.push_back({"bernoulli", {[&](std::span<const Tensor> p) { return sum(bernoulli_nll(sigmoid(p[0]), x)); },
                                   {random_tensor(rng, {2, 3}, -2, 2)}}});
    cases.push_back({"categorical", {[&](std::span<const Tensor> p) { return sum(categorical_nll(p[0], bytes)); },
                                     {random_tensor(rng, {2, 3, 256}, -2, 2)}}});
    cases.push_back(
        {"bitwise", {[&](std::span<const Tensor> p) { return sum(bitwise_categorical_nll(p[0], bytes)); },
                     {random_tensor(rng, {2, 3, 8}, -2, 2)}}});
    cases.push_back(
        {"disc_gaussian",
         {[&](std::span<const Tensor> p) { return sum(discretized_gaussian_nll(p[0], p[1], bytes)); },
          {random_tensor(rng, {2, 3}, -2, 2), random_tensor(rng, {2, 3}, -2, 2)}}});
    cases.push_back({"logistic_mixture",
                     {[&](std::span<const Tensor> p) {
                        return sum(discretized_logistic_mixture_nll(p[0], p[1], p[2], bytes));
                      },
                      {random_tensor(rng, {2, 3, 2}, -2, 2), random_tensor(rng, {2, 3, 2}, -2, 2),
                       random_tensor(rng, {2, 3, 2}, -2, 2)}}});
    for (auto& [name, c] : cases) {
      const auto a = autodiff_gradient(c.first, c.second);
      const auto n = numerical_gradient(c.first, c.second, 1e-6);
      for (std::size_t k = 0; k < a.size(); ++k) {
        for (std::size_t i = 0; i < a[k].size(); ++i) {
          EXPECT_NEAR(a[k][i], n[k][i], 1e-7 + 1e-5 * std::abs(n[k][i])) << name;
        }
      }
    }
  }
}
