#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "svae/data.hpp"
#include "svae/decoders.hpp"
#include "svae/rng.hpp"
#include "svae/tensor.hpp"

namespace svae {

enum class Activation { Relu, Tanh };

std::string_view to_string(Activation activation);
Activation parse_activation(std::string_view name);

struct ModelConfig {
  ImageShape image;
  std::size_t latent_dim = 20;
  std::vector<std::size_t> hidden = {128, 128};
  Activation activation = Activation::Relu;
  DecoderSpec decoder;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Posterior log-std bounds applied with soft_clip inside encode.
inline constexpr ClipBounds kPosteriorClip{-6.0, 2.0};

struct Parameter {
  std::string name;
  Tensor value;
};

/// MLP encoder/decoder weights plus decoder scale state.
///
/// Parameters are stored in a fixed order: encoder layers (weight [in, out],
/// then bias [out]), decoder layers likewise, then "global_lambda" for
/// variants with one learned log-std. running_sigma holds the running
/// average of the batchwise optimal sigma, shaped like optimal_log_sigma's
/// output with the batch axis at extent 1.
struct VaeModel {
  ModelConfig config;
  std::vector<Parameter> params;
  Tensor running_sigma;
  bool running_sigma_initialized = false;

  /// Glorot-uniform weights, zero biases, zero global_lambda.
  static VaeModel create(const ModelConfig& config, std::uint64_t seed);

  std::vector<Tensor> values() const;
  void set_values(std::span<const Tensor> values);
  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);

  std::size_t num_encoder_params() const { return 2 * (config.hidden.size() + 1); }
};

/// Running-sigma shape for a sharing scheme: pooled axes at extent 1 and the
/// batch axis always at extent 1.
Shape running_sigma_shape(const ModelConfig& config);

struct Batch {
  Tensor x;      // [B, C, H, W] floats in [0, 1]
  Tensor bytes;  // same shape, integer intensities
};

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);
Batch make_batch(const Dataset& dataset);

struct Posterior {
  Tensor mu;         // [B, latent]
  Tensor log_sigma;  // [B, latent]
};

/// Functions taking a parameter span accept tensors on a tape, so a caller
/// can bind leaves and differentiate; the VaeModel overloads use the stored
/// values.
Posterior encode(const ModelConfig& config, std::span<const Tensor> params, const Tensor& x);
Posterior encode(const VaeModel& model, const Tensor& x);

Tensor reparameterize(const Tensor& mu, const Tensor& log_sigma, const Tensor& eps);
Tensor reparameterize(const Tensor& mu, const Tensor& log_sigma, Rng& rng);

/// Sum over latent dimensions of KL(N(mu, e^{2 lambda}) || N(0, 1)); shape [B].
Tensor kl_diag_gaussian(const Tensor& mu, const Tensor& log_sigma);

/// Decoder outputs for latents z [B, latent]. OptimalSigma leaves log_sigma
/// empty.
DecoderParams decode(const ModelConfig& config, std::span<const Tensor> params, const Tensor& z);
DecoderParams decode(const VaeModel& model, const Tensor& z);

struct BetaVae {
  double beta = 1.0;
};
/// Gaussian decoder with a learned global log-std (SharedSigma variant).
struct SigmaVaeShared {};
/// Gaussian decoder whose log-std is the batchwise optimum per sharing group.
struct SigmaVaeOptimal {
  SharingScheme sharing;
};
/// Negative ELBO with the decoder's own likelihood.
struct PlainElbo {};
/// Gaussian decoder with a given log-std, broadcastable to the data.
struct SigmaVaeFixed {
  Tensor log_sigma;
};

using ObjectiveMode = std::variant<BetaVae, SigmaVaeShared, SigmaVaeOptimal, PlainElbo, SigmaVaeFixed>;

std::string objective_name(const ObjectiveMode& mode);
/// Throws ContractViolation when the objective cannot drive the decoder.
void check_objective(const ModelConfig& config, const ObjectiveMode& mode);
/// The natural objective for a decoder: SigmaVaeShared for SharedSigma,
/// SigmaVaeOptimal for OptimalSigma, BetaVae(1) for UnitGaussian, PlainElbo
/// otherwise.
ObjectiveMode default_objective(const DecoderSpec& spec);

struct LossBreakdown {
  double total = 0.0;
  double distortion = 0.0;
  double rate = 0.0;
  std::optional<double> sigma;
  double beta_effective = 1.0;
};

struct LossResult {
  Tensor loss;  // scalar, on the tape when the parameters are
  LossBreakdown breakdown;
  /// Batchwise optimal log-std per group (SigmaVaeOptimal only).
  std::optional<Tensor> optimal_log_sigma;
  /// Per-sample distortion and rate, [B].
  Tensor distortion_per_sample;
  Tensor rate_per_sample;
};

/// Loss for one batch with explicit posterior noise eps [B, latent].
LossResult elbo_loss(const ModelConfig& config, std::span<const Tensor> params, const Batch& batch,
                     const ObjectiveMode& mode, const Tensor& eps);
LossResult elbo_loss(const VaeModel& model, const Batch& batch, const ObjectiveMode& mode, Rng& rng);

enum class BetaConvention { Text, Eq7 };

/// Text convention beta = 2 sigma^2; Eq7 convention beta = sigma^2.
double effective_beta(double sigma, BetaConvention convention);

/// Decoder parameters with the scale filled from running_sigma for the
/// OptimalSigma variant.
DecoderParams with_test_scale(const VaeModel& model, DecoderParams params);

/// n images [n, C, H, W] decoded from prior draws.
Tensor generate(const VaeModel& model, std::size_t n, Rng& rng, SampleMode mode);
Tensor reconstruct(const VaeModel& model, const Tensor& x, Rng& rng, SampleMode mode);

}  // namespace svae
