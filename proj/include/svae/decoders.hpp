#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "svae/rng.hpp"
#include "svae/tensor.hpp"

namespace svae {

enum class DecoderVariant {
  UnitGaussian,
  SharedSigma,
  PerPixelSigma,
  OptimalSigma,
  Bernoulli,
  Categorical256,
  BitwiseCategorical,
  DiscretizedGaussian,
  DiscretizedLogisticMixture,
};

std::string_view to_string(DecoderVariant variant);
DecoderVariant parse_decoder_variant(std::string_view name);

/// Continuous Gaussian decoders that predict a mean image.
bool is_gaussian(DecoderVariant variant);
/// Decoders whose likelihood is a 256-way mass per sub-pixel.
bool is_discrete(DecoderVariant variant);

enum class PoolAxis : unsigned { Batch = 1, Channel = 2, Row = 4, Column = 8 };

/// Axes of an [N, C, H, W] residual over which the optimal variance is
/// averaged. Every combination of pooled axes defines one sharing group per
/// index of the remaining axes.
class SharingScheme {
 public:
  constexpr SharingScheme() = default;

  /// One sigma for everything.
  static SharingScheme shared() { return SharingScheme(0xF); }
  /// One sigma per image.
  static SharingScheme per_image() { return SharingScheme(0xE); }
  /// One sigma per pixel and channel of every image (no pooling).
  static SharingScheme per_pixel() { return SharingScheme(0x0); }
  /// One sigma per pixel and channel, shared across the images of a batch.
  static SharingScheme per_location() { return SharingScheme(0x1); }
  static SharingScheme per_channel() { return SharingScheme(0xD); }
  static SharingScheme per_row() { return SharingScheme(0xB); }
  static SharingScheme per_column() { return SharingScheme(0x7); }

  static SharingScheme from_mask(unsigned mask);
  /// Accepts the preset names above or "pool:" followed by a '+'-separated
  /// list of batch/channel/row/column.
  static SharingScheme parse(std::string_view text);

  bool pools(PoolAxis axis) const noexcept { return (mask_ & static_cast<unsigned>(axis)) != 0; }
  unsigned mask() const noexcept { return mask_; }
  std::string name() const;

  /// Variance values per image: product of the non-pooled channel and
  /// spatial extents (1 for shared and per-image, C*H*W for per-pixel).
  std::size_t variance_parameter_count(std::size_t channels, std::size_t rows, std::size_t cols) const;

  bool operator==(const SharingScheme&) const = default;

 private:
  explicit constexpr SharingScheme(unsigned mask) : mask_(mask) {}
  unsigned mask_ = 0xF;
};

struct ClipBounds {
  double lambda_min = -6.0;
  double lambda_max = 0.0;

  void validate() const;
  bool operator==(const ClipBounds&) const = default;
};

struct DecoderSpec {
  DecoderVariant variant = DecoderVariant::OptimalSigma;
  std::optional<SharingScheme> sharing = SharingScheme::shared();
  ClipBounds clip;
  std::size_t mixture_components = 5;

  static DecoderSpec make(DecoderVariant variant, std::optional<SharingScheme> sharing = std::nullopt);

  void validate() const;
  /// Network output values per data dimension.
  std::size_t head_multiplier() const;
  /// Variants whose scale is one learned global log-std.
  bool has_global_lambda() const;

  bool operator==(const DecoderSpec&) const = default;
};

/// Decoder outputs. Which members are populated depends on the variant:
///   Gaussian variants   mean [B, ...], log_sigma broadcastable to mean
///                       (left empty for OptimalSigma until an objective
///                       decides the variance)
///   Bernoulli           mean holds probabilities
///   Categorical256      logits [B, ..., 256]
///   BitwiseCategorical  logits [B, ..., 8], most significant bit first
///   DiscretizedGaussian mean, log_sigma
///   Logistic mixture    component_means, component_log_scales, logits
///                       (mixture weights), each [B, ..., K]
struct DecoderParams {
  std::optional<Tensor> mean;
  std::optional<Tensor> log_sigma;
  std::optional<Tensor> logits;
  std::optional<Tensor> component_means;
  std::optional<Tensor> component_log_scales;
};

/// Sum over data dimensions of lambda + (x - mean)^2 / (2 e^{2 lambda}) +
/// ln sqrt(2 pi). Returns one value per sample, shape [B].
Tensor gaussian_nll(const Tensor& x, const Tensor& mean, const Tensor& log_sigma);

/// Smoothly bounds lambda into (lambda_min, lambda_max + ln(1 + e^{min - max})).
Tensor soft_clip(const Tensor& lambda, const ClipBounds& bounds);

/// Closed-form maximum-likelihood log-std per sharing group: half the log of
/// the mean squared residual over each group, hard-clamped into the bounds.
/// x and mean are [N, C, H, W]; the result keeps pooled axes at extent 1 and
/// is never on a tape.
Tensor optimal_log_sigma(const Tensor& x, const Tensor& mean, const SharingScheme& sharing, const ClipBounds& bounds);

inline constexpr double kBernoulliEps = 1e-7;

Tensor bernoulli_nll(const Tensor& probs, const Tensor& x);

/// x_bytes holds integer intensities 0..255 shaped like logits minus the last axis.
Tensor categorical_nll(const Tensor& logits, const Tensor& x_bytes);
Tensor bitwise_categorical_nll(const Tensor& bit_logits, const Tensor& x_bytes);

inline constexpr double kMinLogScale = -7.0;

Tensor discretized_logistic_mixture_nll(const Tensor& means, const Tensor& log_scales, const Tensor& mixture_logits,
                                        const Tensor& x_bytes);
Tensor discretized_gaussian_nll(const Tensor& mean, const Tensor& log_sigma, const Tensor& x_bytes);

/// NLL of the bytes under any discrete variant, or under the discretized
/// Gaussian with the same mean and log_sigma for a Gaussian variant.
Tensor discrete_nll(const DecoderSpec& spec, const DecoderParams& params, const Tensor& x_bytes);

/// Log mass of each of the 256 intensities per sub-pixel, shape [B, ..., 256].
/// Gaussian variants are discretized with the shared bin geometry.
Tensor log_pmf_table(const DecoderSpec& spec, const DecoderParams& params);

enum class SampleMode { Mean, Sample };

/// Images in [0, 1] shaped like the data. Mean mode gives the distribution
/// mean (expected intensity for discrete variants); Sample mode draws.
Tensor decoder_sample(const DecoderSpec& spec, const DecoderParams& params, Rng& rng, SampleMode mode);

/// Intensities as a tensor of integer-valued doubles; throws ContractViolation
/// when a value is not an integer in 0..255.
std::vector<std::size_t> checked_bytes(const Tensor& x_bytes);

}  // namespace svae
