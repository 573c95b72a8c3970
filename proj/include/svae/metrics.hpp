#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "svae/data.hpp"
#include "svae/rng.hpp"
#include "svae/training.hpp"
#include "svae/vae.hpp"

namespace svae {

/// Posterior noise [n, latent] for the given images. Each row is drawn from a
/// stream keyed by the image bytes and `seed`, so a datum receives the same
/// noise wherever it sits in the dataset.
Tensor posterior_noise(const Dataset& dataset, std::span<const std::size_t> indices, std::uint64_t seed,
                       std::size_t latent_dim);

struct ElboEstimate {
  double neg_elbo = 0.0;
  double distortion = 0.0;
  double rate = 0.0;
  /// Gaussian decoders only: the same means and scales integrated over the
  /// 256 intensity bins.
  std::optional<double> neg_elbo_discretized;
  std::optional<double> distortion_discretized;
  /// Decoder sigma used for the estimate (RMS over groups), Gaussian only.
  std::optional<double> sigma;
};

/// Decoder log-std used at test time for Gaussian decoders on the given
/// batch: the learned scale, the running average for batch-pooled optimal
/// schemes, or the per-image optimum for schemes that keep the batch axis.
Tensor test_log_sigma(const VaeModel& model, const DecoderParams& params, const Tensor& x);

/// Single-sample negative ELBO, distortion and rate in nats per sample,
/// averaged over the dataset. Draws one seed from rng.
ElboEstimate eval_elbo(const VaeModel& model, const Dataset& dataset, Rng& rng);

struct MiEstimate {
  double mi = 0.0;
  double marginal_kl = 0.0;
  /// Monte-Carlo rate; equals mi + marginal_kl up to rounding.
  double rate = 0.0;
  /// Closed-form mean KL of the same posteriors.
  double rate_analytic = 0.0;
  /// Standard error of mi from the spread of the per-datum terms.
  double mi_stderr = 0.0;
  std::size_t samples = 0;
};

/// Logsumexp mixture estimator over N posteriors (rows of mu / log_sigma)
/// with one draw z_i = mu_i + e^{log_sigma_i} eps_i each. Requires N >= 2.
MiEstimate mi_marginal_kl(const Tensor& mu, const Tensor& log_sigma, const Tensor& eps);
/// Uses min(n, dataset size) images chosen with rng.
MiEstimate mi_marginal_kl(const VaeModel& model, const Dataset& dataset, std::size_t n, Rng& rng);

struct SigmaStderr {
  double inner_pct = 0.0;  // posterior redraws on one fixed batch
  double outer_pct = 0.0;  // independent random batches
  double mean_sigma = 0.0;
};

/// Spread of the batchwise optimal sigma (RMS over the model's sharing
/// groups; fully shared for other decoders) as a percentage of its mean.
/// Requires trials >= 30 and batch_size <= dataset size.
SigmaStderr sigma_mc_stderr(const VaeModel& model, const Dataset& dataset, std::size_t batch_size,
                            std::size_t trials, Rng& rng);

struct MetricsRecord {
  double neg_elbo = 0.0;
  double distortion = 0.0;
  double rate = 0.0;
  std::optional<double> neg_elbo_discretized;
  double mi = 0.0;
  double marginal_kl = 0.0;
  double rate_mc = 0.0;
  std::size_t mi_samples = 0;
  std::optional<double> sigma;
  std::optional<double> beta_eff_text;
  std::optional<double> beta_eff_eq7;
  std::optional<double> sigma_stderr_inner_pct;
  std::optional<double> sigma_stderr_outer_pct;
};

struct EvalOptions {
  std::size_t mi_samples = 512;
  /// 0 skips the sigma standard-error analysis.
  std::size_t stderr_trials = 0;
  std::size_t stderr_batch = 128;
  std::uint64_t seed = 0;
};

/// eval_elbo, mi_marginal_kl and (optionally) sigma_mc_stderr on one dataset
/// with streams derived from options.seed.
MetricsRecord evaluate(const VaeModel& model, const Dataset& dataset, const EvalOptions& options);

struct SweepRow {
  std::string run;
  std::optional<double> beta;
  std::string scheme;
  std::optional<std::size_t> variance_params;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricsRecord metrics;
};

/// One unit-Gaussian beta-VAE per beta, then one optimal-sigma run with a
/// fully shared scale. Every row trains from base.seed and is evaluated with
/// the same noise; a failing row is marked and the others continue.
std::vector<SweepRow> beta_sweep(const Dataset& train, const Dataset& test, std::span<const double> betas,
                                 const TrainConfig& base, const EvalOptions& eval);

/// One optimal-sigma run per scheme, ordered by variance parameter count,
/// all from base.seed.
std::vector<SweepRow> sharing_sweep(const Dataset& train, const Dataset& test,
                                    std::span<const SharingScheme> schemes, const TrainConfig& base,
                                    const EvalOptions& eval);

}  // namespace svae
