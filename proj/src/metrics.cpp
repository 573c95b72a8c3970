#include "svae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "svae/errors.hpp"
#include "svae/ops.hpp"
#include "svae/special.hpp"

namespace svae {

namespace {

constexpr std::uint64_t kEvalElboStream = 1;
constexpr std::uint64_t kEvalMiStream = 2;
constexpr std::uint64_t kEvalStderrStream = 3;
constexpr std::uint64_t kSweepStream = 0x5357;
constexpr std::size_t kEvalChunk = 256;

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Sum in ascending order, so the result does not depend on input order.
double sorted_mean(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

double relative_spread_pct(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  if (*lo == *hi) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return 100.0 * std::sqrt(ss / static_cast<double>(v.size() - 1)) / m;
}

double rms_sigma(const Tensor& log_sigma) {
  double acc = 0.0;
  for (double l : log_sigma.data()) acc += std::exp(2.0 * l);
  return std::sqrt(acc / static_cast<double>(log_sigma.size()));
}

std::vector<std::size_t> random_subset(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.uniform_index(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

bool has_gaussian_mean(DecoderVariant v) { return is_gaussian(v) || v == DecoderVariant::DiscretizedGaussian; }

}  // namespace

Tensor posterior_noise(const Dataset& dataset, std::span<const std::size_t> indices, std::uint64_t seed,
                       std::size_t latent_dim) {
  Tensor out({indices.size(), latent_dim});
  auto o = out.mutable_data();
  for (std::size_t n = 0; n < indices.size(); ++n) {
    Rng rng(derive_seed(seed, fnv1a(dataset.image(indices[n]))));
    const Tensor row = sample_normal(rng, {latent_dim});
    std::copy(row.data().begin(), row.data().end(), o.begin() + static_cast<std::ptrdiff_t>(n * latent_dim));
  }
  return out;
}

Tensor test_log_sigma(const VaeModel& model, const DecoderParams& params, const Tensor& x) {
  const DecoderSpec& spec = model.config.decoder;
  if (spec.variant != DecoderVariant::OptimalSigma) {
    if (!params.log_sigma) throw ContractViolation("decoder has no scale");
    return params.log_sigma->detach();
  }
  if (spec.sharing->pools(PoolAxis::Batch)) return log(model.running_sigma);
  return optimal_log_sigma(x, *params.mean, *spec.sharing, spec.clip);
}

ElboEstimate eval_elbo(const VaeModel& model, const Dataset& dataset, Rng& rng) {
  if (dataset.count == 0) throw ContractViolation("eval_elbo needs a non-empty dataset");
  const std::uint64_t seed = rng.next_u64();
  const DecoderSpec& spec = model.config.decoder;
  const bool gaussian = has_gaussian_mean(spec.variant);
  std::vector<double> distortion, discretized, rate;
  double var_sum = 0.0;
  std::size_t var_count = 0;
  for (std::size_t begin = 0; begin < dataset.count; begin += kEvalChunk) {
    std::vector<std::size_t> idx(std::min(kEvalChunk, dataset.count - begin));
    std::iota(idx.begin(), idx.end(), begin);
    const Batch batch = make_batch(dataset, idx);
    const Posterior post = encode(model, batch.x);
    const Tensor z = reparameterize(post.mu, post.log_sigma, posterior_noise(dataset, idx, seed, model.config.latent_dim));
    const DecoderParams dp = decode(model, z);
    const Tensor kl = kl_diag_gaussian(post.mu, post.log_sigma);
    rate.insert(rate.end(), kl.data().begin(), kl.data().end());
    Tensor d;
    if (gaussian) {
      const Tensor ls = test_log_sigma(model, dp, batch.x);
      for (double l : ls.data()) var_sum += std::exp(2.0 * l);
      var_count += ls.size();
      const Tensor dd = discretized_gaussian_nll(*dp.mean, ls, batch.bytes);
      discretized.insert(discretized.end(), dd.data().begin(), dd.data().end());
      d = spec.variant == DecoderVariant::DiscretizedGaussian ? dd : gaussian_nll(batch.x, *dp.mean, ls);
    } else if (spec.variant == DecoderVariant::Bernoulli) {
      d = bernoulli_nll(*dp.mean, batch.x);
    } else {
      d = discrete_nll(spec, dp, batch.bytes);
    }
    distortion.insert(distortion.end(), d.data().begin(), d.data().end());
  }

  ElboEstimate e;
  std::vector<double> total(distortion.size());
  for (std::size_t i = 0; i < total.size(); ++i) total[i] = distortion[i] + rate[i];
  e.neg_elbo = sorted_mean(total);
  e.distortion = sorted_mean(distortion);
  e.rate = sorted_mean(rate);
  if (gaussian && spec.variant != DecoderVariant::DiscretizedGaussian) {
    std::vector<double> total_d(discretized.size());
    for (std::size_t i = 0; i < total_d.size(); ++i) total_d[i] = discretized[i] + rate[i];
    e.neg_elbo_discretized = sorted_mean(total_d);
    e.distortion_discretized = sorted_mean(discretized);
  }
  if (gaussian) e.sigma = std::sqrt(var_sum / static_cast<double>(var_count));
  return e;
}

MiEstimate mi_marginal_kl(const Tensor& mu, const Tensor& log_sigma, const Tensor& eps) {
  if (mu.rank() != 2 || mu.shape() != log_sigma.shape() || mu.shape() != eps.shape()) {
    throw ContractViolation("mi_marginal_kl needs equal [N, latent] posteriors and noise");
  }
  const std::size_t n = mu.extent(0);
  const std::size_t l = mu.extent(1);
  if (n < 2) throw ContractViolation("mi_marginal_kl needs at least two data points");

  std::vector<double> z(n * l), inv_var(n * l), norm(n, 0.0);
  double kl_sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t d = 0; d < l; ++d) {
      const std::size_t k = j * l + d;
      z[k] = mu[k] + std::exp(log_sigma[k]) * eps[k];
      inv_var[k] = std::exp(-2.0 * log_sigma[k]);
      norm[j] -= log_sigma[k] + special::kLogSqrt2Pi;
      kl_sum += 0.5 * (mu[k] * mu[k] + std::exp(2.0 * log_sigma[k]) - 1.0 - 2.0 * log_sigma[k]);
    }
  }
  const double log_n = std::log(static_cast<double>(n));
  std::vector<double> mi_terms(n), mkl_terms(n), rate_terms(n), row(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* zi = &z[i * l];
    for (std::size_t j = 0; j < n; ++j) {
      double quad = 0.0;
      for (std::size_t d = 0; d < l; ++d) {
        const double r = zi[d] - mu[j * l + d];
        quad += r * r * inv_var[j * l + d];
      }
      row[j] = norm[j] - 0.5 * quad;
    }
    const double m = *std::max_element(row.begin(), row.end());
    double acc = 0.0;
    for (double v : row) acc += std::exp(v - m);
    const double log_marginal = m + std::log(acc) - log_n;
    double log_prior = 0.0;
    for (std::size_t d = 0; d < l; ++d) log_prior -= 0.5 * zi[d] * zi[d] + special::kLogSqrt2Pi;
    const double log_q = row[i];
    mi_terms[i] = log_q - log_marginal;
    mkl_terms[i] = log_marginal - log_prior;
    rate_terms[i] = log_q - log_prior;
  }
  MiEstimate est;
  est.samples = n;
  const double dn = static_cast<double>(n);
  est.mi = std::accumulate(mi_terms.begin(), mi_terms.end(), 0.0) / dn;
  est.marginal_kl = std::accumulate(mkl_terms.begin(), mkl_terms.end(), 0.0) / dn;
  est.rate = std::accumulate(rate_terms.begin(), rate_terms.end(), 0.0) / dn;
  est.rate_analytic = kl_sum / dn;
  double ss = 0.0;
  for (double t : mi_terms) ss += (t - est.mi) * (t - est.mi);
  est.mi_stderr = std::sqrt(ss / (dn - 1.0) / dn);
  return est;
}

MiEstimate mi_marginal_kl(const VaeModel& model, const Dataset& dataset, std::size_t n, Rng& rng) {
  const std::size_t m = std::min(n, dataset.count);
  if (m < 2) throw ContractViolation("mi_marginal_kl needs at least two data points");
  const auto idx = random_subset(rng, dataset.count, m);
  const Posterior post = encode(model, dataset.floats(idx));
  const Tensor eps = sample_normal(rng, {m, model.config.latent_dim});
  return mi_marginal_kl(post.mu, post.log_sigma, eps);
}

SigmaStderr sigma_mc_stderr(const VaeModel& model, const Dataset& dataset, std::size_t batch_size, std::size_t trials,
                            Rng& rng) {
  if (trials < 30) throw ContractViolation("sigma_mc_stderr needs at least 30 trials");
  if (batch_size == 0 || batch_size > dataset.count) throw ContractViolation("sigma_mc_stderr batch size out of range");
  const DecoderSpec& spec = model.config.decoder;
  if (!has_gaussian_mean(spec.variant)) throw ContractViolation("sigma_mc_stderr needs a Gaussian decoder");
  const SharingScheme sharing = spec.sharing.value_or(SharingScheme::shared());

  auto batch_sigma = [&](const Batch& batch) {
    const Posterior post = encode(model, batch.x);
    const Tensor z = reparameterize(post.mu, post.log_sigma, rng);
    const DecoderParams dp = decode(model, z);
    return rms_sigma(optimal_log_sigma(batch.x, *dp.mean, sharing, spec.clip));
  };

  const Batch fixed = make_batch(dataset, random_subset(rng, dataset.count, batch_size));
  std::vector<double> inner(trials), outer(trials);
  for (std::size_t t = 0; t < trials; ++t) inner[t] = batch_sigma(fixed);
  for (std::size_t t = 0; t < trials; ++t) {
    outer[t] = batch_sigma(make_batch(dataset, random_subset(rng, dataset.count, batch_size)));
  }
  SigmaStderr s;
  s.inner_pct = relative_spread_pct(inner);
  s.outer_pct = relative_spread_pct(outer);
  s.mean_sigma = std::accumulate(outer.begin(), outer.end(), 0.0) / static_cast<double>(trials);
  return s;
}

MetricsRecord evaluate(const VaeModel& model, const Dataset& dataset, const EvalOptions& options) {
  MetricsRecord r;
  Rng elbo_rng(derive_seed(options.seed, kEvalElboStream));
  const ElboEstimate e = eval_elbo(model, dataset, elbo_rng);
  r.neg_elbo = e.neg_elbo;
  r.distortion = e.distortion;
  r.rate = e.rate;
  r.neg_elbo_discretized = e.neg_elbo_discretized;
  r.sigma = e.sigma;
  if (r.sigma) {
    r.beta_eff_text = effective_beta(*r.sigma, BetaConvention::Text);
    r.beta_eff_eq7 = effective_beta(*r.sigma, BetaConvention::Eq7);
  }
  if (options.mi_samples >= 2 && dataset.count >= 2) {
    Rng mi_rng(derive_seed(options.seed, kEvalMiStream));
    const MiEstimate mi = mi_marginal_kl(model, dataset, options.mi_samples, mi_rng);
    r.mi = mi.mi;
    r.marginal_kl = mi.marginal_kl;
    r.rate_mc = mi.rate;
    r.mi_samples = mi.samples;
  }
  if (options.stderr_trials > 0 && has_gaussian_mean(model.config.decoder.variant)) {
    Rng s_rng(derive_seed(options.seed, kEvalStderrStream));
    const SigmaStderr s =
        sigma_mc_stderr(model, dataset, std::min(options.stderr_batch, dataset.count), options.stderr_trials, s_rng);
    r.sigma_stderr_inner_pct = s.inner_pct;
    r.sigma_stderr_outer_pct = s.outer_pct;
  }
  return r;
}

namespace {

void run_row(SweepRow& row, const Dataset& train, const Dataset& test, const TrainConfig& config,
             const EvalOptions& eval) {
  try {
    const FitResult fitted = fit(train, config);
    EvalOptions opts = eval;
    opts.seed = derive_seed(eval.seed, kSweepStream, row.seed);
    row.metrics = evaluate(fitted.model, test, opts);
    row.ok = true;
  } catch (const std::exception& e) {
    row.ok = false;
    row.error = e.what();
  }
}

}  // namespace

std::vector<SweepRow> beta_sweep(const Dataset& train, const Dataset& test, std::span<const double> betas,
                                 const TrainConfig& base, const EvalOptions& eval) {
  std::vector<SweepRow> rows;
  for (double beta : betas) {
    SweepRow row;
    row.run = "beta_vae";
    row.beta = beta;
    row.scheme = "unit";
    row.seed = base.seed;
    TrainConfig cfg = base;
    cfg.model.decoder = DecoderSpec::make(DecoderVariant::UnitGaussian);
    cfg.model.decoder.clip = base.model.decoder.clip;
    cfg.objective = BetaVae{beta};
    cfg.seed = row.seed;
    run_row(row, train, test, cfg, eval);
    rows.push_back(std::move(row));
  }
  SweepRow row;
  row.run = "sigma_vae";
  row.scheme = SharingScheme::shared().name();
  row.variance_params = 1;
  row.seed = base.seed;
  TrainConfig cfg = base;
  cfg.model.decoder = DecoderSpec::make(DecoderVariant::OptimalSigma, SharingScheme::shared());
  cfg.model.decoder.clip = base.model.decoder.clip;
  cfg.objective = SigmaVaeOptimal{SharingScheme::shared()};
  cfg.seed = row.seed;
  run_row(row, train, test, cfg, eval);
  rows.push_back(std::move(row));
  return rows;
}

std::vector<SweepRow> sharing_sweep(const Dataset& train, const Dataset& test, std::span<const SharingScheme> schemes,
                                    const TrainConfig& base, const EvalOptions& eval) {
  const ImageShape& img = base.model.image;
  std::vector<SharingScheme> ordered(schemes.begin(), schemes.end());
  std::stable_sort(ordered.begin(), ordered.end(), [&](const SharingScheme& a, const SharingScheme& b) {
    return a.variance_parameter_count(img.channels, img.rows, img.cols) <
           b.variance_parameter_count(img.channels, img.rows, img.cols);
  });
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    SweepRow row;
    row.run = "sigma_vae";
    row.scheme = ordered[i].name();
    row.variance_params = ordered[i].variance_parameter_count(img.channels, img.rows, img.cols);
    row.seed = base.seed;
    TrainConfig cfg = base;
    cfg.model.decoder = DecoderSpec::make(DecoderVariant::OptimalSigma, ordered[i]);
    cfg.model.decoder.clip = base.model.decoder.clip;
    cfg.objective = SigmaVaeOptimal{ordered[i]};
    cfg.seed = row.seed;
    run_row(row, train, test, cfg, eval);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace svae
