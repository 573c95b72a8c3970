#include "svae/vae.hpp"

#include <cmath>
#include <numeric>

#include "svae/errors.hpp"
#include "svae/ops.hpp"

namespace svae {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;

Shape image_shape(const ImageShape& s, std::size_t batch) { return {batch, s.channels, s.rows, s.cols}; }

Tensor mlp(std::span<const Tensor> layers, Tensor h, Activation act) {
  const std::size_t n = layers.size() / 2;
  for (std::size_t i = 0; i < n; ++i) {
    h = add(matmul(h, layers[2 * i]), layers[2 * i + 1]);
    if (i + 1 < n) h = act == Activation::Relu ? relu(h) : tanh(h);
  }
  return h;
}

std::size_t expected_param_count(const ModelConfig& c) {
  return 4 * (c.hidden.size() + 1) + (c.decoder.has_global_lambda() ? 1 : 0);
}

void check_params(const ModelConfig& config, std::span<const Tensor> params) {
  if (params.size() != expected_param_count(config)) {
    throw ContractViolation("expected " + std::to_string(expected_param_count(config)) + " parameter tensors, got " +
                            std::to_string(params.size()));
  }
}

/// Element-last view of the head: [B, D * m] -> [B, C, H, W, m].
Tensor head_view(const ModelConfig& c, const Tensor& head, std::size_t m) {
  const std::size_t b = head.extent(0);
  return reshape(head, {b, c.image.channels, c.image.rows, c.image.cols, m});
}

Tensor last_component(const Tensor& t, std::size_t begin, std::size_t end) {
  Tensor s = slice(t, t.rank() - 1, begin, end);
  if (end - begin == 1) {
    Shape shape = s.shape();
    shape.pop_back();
    return reshape(s, shape);
  }
  return s;
}

double mean_of(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.data()) acc += v;
  return t.size() == 0 ? 0.0 : acc / static_cast<double>(t.size());
}

double rms_sigma(const Tensor& log_sigma) {
  double acc = 0.0;
  for (double l : log_sigma.data()) acc += std::exp(2.0 * l);
  return std::sqrt(acc / static_cast<double>(log_sigma.size()));
}

}  // namespace

std::string_view to_string(Activation activation) { return activation == Activation::Relu ? "relu" : "tanh"; }

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw ContractViolation("unknown activation '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (image.dim() == 0) throw ContractViolation("image shape must be non-empty");
  if (latent_dim == 0) throw ContractViolation("latent_dim must be positive");
  for (auto h : hidden) {
    if (h == 0) throw ContractViolation("hidden widths must be positive");
  }
  decoder.validate();
}

Shape running_sigma_shape(const ModelConfig& config) {
  Shape shape{1, 1, 1, 1};
  if (config.decoder.variant != DecoderVariant::OptimalSigma) return shape;
  const SharingScheme& s = *config.decoder.sharing;
  if (!s.pools(PoolAxis::Channel)) shape[1] = config.image.channels;
  if (!s.pools(PoolAxis::Row)) shape[2] = config.image.rows;
  if (!s.pools(PoolAxis::Column)) shape[3] = config.image.cols;
  return shape;
}

VaeModel VaeModel::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  VaeModel m;
  m.config = config;
  const std::size_t d = config.image.dim();
  auto add_mlp = [&](const std::string& prefix, std::vector<std::size_t> widths, std::uint64_t stream) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const std::size_t in = widths[i];
      const std::size_t out = widths[i + 1];
      Rng rng(derive_seed(seed, kInitStream + stream, i));
      const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
      Tensor w = sample_uniform(rng, {in, out});
      for (double& v : w.mutable_data()) v = (2.0 * v - 1.0) * limit;
      m.params.push_back({prefix + std::to_string(i) + ".weight", std::move(w)});
      m.params.push_back({prefix + std::to_string(i) + ".bias", Tensor({out})});
    }
  };
  std::vector<std::size_t> enc{d};
  enc.insert(enc.end(), config.hidden.begin(), config.hidden.end());
  enc.push_back(2 * config.latent_dim);
  add_mlp("encoder.", enc, 0);
  std::vector<std::size_t> dec{config.latent_dim};
  dec.insert(dec.end(), config.hidden.rbegin(), config.hidden.rend());
  dec.push_back(d * config.decoder.head_multiplier());
  add_mlp("decoder.", dec, 1);
  if (config.decoder.has_global_lambda()) m.params.push_back({"global_lambda", Tensor({1})});
  m.running_sigma = Tensor(running_sigma_shape(config), 1.0);
  return m;
}

std::vector<Tensor> VaeModel::values() const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

void VaeModel::set_values(std::span<const Tensor> values) {
  if (values.size() != params.size()) throw ContractViolation("parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].shape() != params[i].value.shape()) {
      throw ContractViolation("shape mismatch for parameter " + params[i].name);
    }
    params[i].value = values[i].detach();
  }
}

const Tensor& VaeModel::param(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p.value;
  }
  throw ContractViolation("no parameter named " + name);
}

Tensor& VaeModel::param(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const VaeModel&>(*this).param(name));
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  return Batch{dataset.floats(indices), dataset.byte_values(indices)};
}

Batch make_batch(const Dataset& dataset) { return Batch{dataset.floats(), dataset.byte_values()}; }

Posterior encode(const ModelConfig& config, std::span<const Tensor> params, const Tensor& x) {
  check_params(config, params);
  if (x.rank() < 2 || x.size() != x.extent(0) * config.image.dim()) {
    throw ContractViolation("encode: input " + to_string(x.shape()) + " does not hold images of dimension " +
                            std::to_string(config.image.dim()));
  }
  const std::size_t b = x.extent(0);
  const std::size_t n_enc = 2 * (config.hidden.size() + 1);
  const Tensor out = mlp(params.subspan(0, n_enc), reshape(x, {b, config.image.dim()}), config.activation);
  if (!out.all_finite()) throw NumericInstability("encoder produced non-finite activations");
  const std::size_t l = config.latent_dim;
  return Posterior{slice(out, 1, 0, l), soft_clip(slice(out, 1, l, 2 * l), kPosteriorClip)};
}

Posterior encode(const VaeModel& model, const Tensor& x) { return encode(model.config, model.values(), x); }

Tensor reparameterize(const Tensor& mu, const Tensor& log_sigma, const Tensor& eps) {
  if (mu.shape() != log_sigma.shape() || mu.shape() != eps.shape()) {
    throw ContractViolation("reparameterize needs equal shapes");
  }
  return add(mu, mul(exp(log_sigma), eps));
}

Tensor reparameterize(const Tensor& mu, const Tensor& log_sigma, Rng& rng) {
  return reparameterize(mu, log_sigma, sample_normal(rng, mu.shape()));
}

Tensor kl_diag_gaussian(const Tensor& mu, const Tensor& log_sigma) {
  if (mu.shape() != log_sigma.shape()) throw ContractViolation("kl_diag_gaussian needs equal shapes");
  const Tensor inner = sub(add(square(mu), exp(scale(log_sigma, 2.0))), add_scalar(scale(log_sigma, 2.0), 1.0));
  return sum_per_sample(scale(inner, 0.5));
}

DecoderParams decode(const ModelConfig& config, std::span<const Tensor> params, const Tensor& z) {
  check_params(config, params);
  if (z.rank() != 2 || z.extent(1) != config.latent_dim) {
    throw ContractViolation("decode: latents " + to_string(z.shape()) + " do not match latent_dim " +
                            std::to_string(config.latent_dim));
  }
  const std::size_t n_enc = 2 * (config.hidden.size() + 1);
  const Tensor head = mlp(params.subspan(n_enc, n_enc), z, config.activation);
  const DecoderSpec& spec = config.decoder;
  const std::size_t b = z.extent(0);
  const Shape img = image_shape(config.image, b);
  DecoderParams out;
  switch (spec.variant) {
    case DecoderVariant::UnitGaussian:
      out.mean = reshape(head, img);
      out.log_sigma = Tensor({1, 1, 1, 1}, 0.0);
      break;
    case DecoderVariant::SharedSigma:
    case DecoderVariant::DiscretizedGaussian:
      out.mean = reshape(head, img);
      out.log_sigma = reshape(soft_clip(params.back(), spec.clip), {1, 1, 1, 1});
      break;
    case DecoderVariant::OptimalSigma:
      out.mean = reshape(head, img);
      break;
    case DecoderVariant::PerPixelSigma: {
      const Tensor v = head_view(config, head, 2);
      out.mean = last_component(v, 0, 1);
      out.log_sigma = soft_clip(last_component(v, 1, 2), spec.clip);
      break;
    }
    case DecoderVariant::Bernoulli:
      out.mean = sigmoid(reshape(head, img));
      break;
    case DecoderVariant::Categorical256:
      out.logits = head_view(config, head, 256);
      break;
    case DecoderVariant::BitwiseCategorical:
      out.logits = head_view(config, head, 8);
      break;
    case DecoderVariant::DiscretizedLogisticMixture: {
      const std::size_t k = spec.mixture_components;
      const Tensor v = head_view(config, head, 3 * k);
      out.logits = slice(v, 4, 0, k);
      out.component_means = slice(v, 4, k, 2 * k);
      out.component_log_scales = slice(v, 4, 2 * k, 3 * k);
      break;
    }
  }
  return out;
}

DecoderParams decode(const VaeModel& model, const Tensor& z) { return decode(model.config, model.values(), z); }

std::string objective_name(const ObjectiveMode& mode) {
  struct Visitor {
    std::string operator()(const BetaVae&) const { return "beta_vae"; }
    std::string operator()(const SigmaVaeShared&) const { return "sigma_vae_shared"; }
    std::string operator()(const SigmaVaeOptimal&) const { return "sigma_vae_optimal"; }
    std::string operator()(const PlainElbo&) const { return "plain_elbo"; }
    std::string operator()(const SigmaVaeFixed&) const { return "sigma_vae_fixed"; }
  };
  return std::visit(Visitor{}, mode);
}

void check_objective(const ModelConfig& config, const ObjectiveMode& mode) {
  const DecoderSpec& spec = config.decoder;
  const std::string name = objective_name(mode);
  const std::string variant(to_string(spec.variant));
  auto fail = [&] { throw ContractViolation("objective " + name + " cannot drive the " + variant + " decoder"); };
  if (const auto* b = std::get_if<BetaVae>(&mode)) {
    if (!(b->beta > 0.0) || !std::isfinite(b->beta)) throw ContractViolation("beta must be positive and finite");
    if (!is_gaussian(spec.variant)) fail();
  } else if (std::holds_alternative<SigmaVaeShared>(mode)) {
    if (spec.variant != DecoderVariant::SharedSigma) fail();
  } else if (const auto* o = std::get_if<SigmaVaeOptimal>(&mode)) {
    if (spec.variant != DecoderVariant::OptimalSigma) fail();
    if (!(o->sharing == *spec.sharing)) throw ContractViolation("objective sharing scheme differs from the decoder's");
  } else if (std::holds_alternative<PlainElbo>(mode)) {
    if (spec.variant == DecoderVariant::OptimalSigma) fail();
  } else if (const auto* f = std::get_if<SigmaVaeFixed>(&mode)) {
    if (!is_gaussian(spec.variant)) fail();
    if (!f->log_sigma.all_finite()) throw ContractViolation("fixed log_sigma must be finite");
  }
}

ObjectiveMode default_objective(const DecoderSpec& spec) {
  switch (spec.variant) {
    case DecoderVariant::SharedSigma:
      return SigmaVaeShared{};
    case DecoderVariant::OptimalSigma:
      return SigmaVaeOptimal{spec.sharing.value_or(SharingScheme::shared())};
    case DecoderVariant::UnitGaussian:
      return BetaVae{1.0};
    default:
      return PlainElbo{};
  }
}

LossResult elbo_loss(const ModelConfig& config, std::span<const Tensor> params, const Batch& batch,
                     const ObjectiveMode& mode, const Tensor& eps) {
  check_objective(config, mode);
  if (batch.x.rank() != 4 || batch.x.extent(0) == 0) throw ContractViolation("elbo_loss needs a non-empty batch");
  const Posterior post = encode(config, params, batch.x);
  const Tensor z = reparameterize(post.mu, post.log_sigma, eps);
  const DecoderParams dp = decode(config, params, z);
  const Tensor kl = kl_diag_gaussian(post.mu, post.log_sigma);
  const DecoderSpec& spec = config.decoder;

  LossResult result;
  double beta = 1.0;
  Tensor distortion;
  std::optional<double> sigma;
  double beta_effective = 1.0;

  if (const auto* b = std::get_if<BetaVae>(&mode)) {
    beta = b->beta;
    distortion = sum_per_sample(scale(square(sub(batch.x, *dp.mean)), 0.5));
    sigma = 1.0;
    beta_effective = beta;
  } else if (std::holds_alternative<PlainElbo>(mode)) {
    if (spec.variant == DecoderVariant::Bernoulli) {
      distortion = bernoulli_nll(*dp.mean, batch.x);
    } else if (is_discrete(spec.variant)) {
      distortion = discrete_nll(spec, dp, batch.bytes);
    } else {
      distortion = gaussian_nll(batch.x, *dp.mean, *dp.log_sigma);
      sigma = rms_sigma(dp.log_sigma->detach());
    }
    if (spec.variant == DecoderVariant::DiscretizedGaussian) sigma = rms_sigma(dp.log_sigma->detach());
  } else {
    Tensor log_sigma;
    if (std::holds_alternative<SigmaVaeShared>(mode)) {
      log_sigma = *dp.log_sigma;
    } else if (const auto* o = std::get_if<SigmaVaeOptimal>(&mode)) {
      log_sigma = optimal_log_sigma(batch.x, *dp.mean, o->sharing, spec.clip);
      result.optimal_log_sigma = log_sigma;
    } else {
      log_sigma = std::get<SigmaVaeFixed>(mode).log_sigma;
    }
    distortion = gaussian_nll(batch.x, *dp.mean, log_sigma);
    sigma = rms_sigma(log_sigma.detach());
    beta_effective = effective_beta(*sigma, BetaConvention::Eq7);
  }

  result.loss = mean(add(distortion, scale(kl, beta)));
  result.distortion_per_sample = distortion.detach();
  result.rate_per_sample = kl.detach();
  LossBreakdown& br = result.breakdown;
  br.distortion = mean_of(result.distortion_per_sample);
  br.rate = mean_of(result.rate_per_sample);
  br.total = result.loss.item();
  br.sigma = sigma;
  br.beta_effective = beta_effective;
  if (!std::isfinite(br.distortion)) {
    throw NumericInstability("non-finite distortion term (" + std::string(to_string(spec.variant)) + " decoder)");
  }
  if (!std::isfinite(br.rate)) throw NumericInstability("non-finite rate term");
  if (!std::isfinite(br.total)) throw NumericInstability("non-finite total loss");
  return result;
}

LossResult elbo_loss(const VaeModel& model, const Batch& batch, const ObjectiveMode& mode, Rng& rng) {
  const Tensor eps = sample_normal(rng, {batch.x.rank() > 0 ? batch.x.extent(0) : 0, model.config.latent_dim});
  return elbo_loss(model.config, model.values(), batch, mode, eps);
}

double effective_beta(double sigma, BetaConvention convention) {
  if (!(sigma > 0.0)) throw ContractViolation("effective_beta needs sigma > 0");
  const double var = sigma * sigma;
  return convention == BetaConvention::Text ? 2.0 * var : var;
}

DecoderParams with_test_scale(const VaeModel& model, DecoderParams params) {
  if (model.config.decoder.variant == DecoderVariant::OptimalSigma && !params.log_sigma) {
    params.log_sigma = log(model.running_sigma);
  }
  return params;
}

Tensor generate(const VaeModel& model, std::size_t n, Rng& rng, SampleMode mode) {
  if (n == 0) return Tensor(image_shape(model.config.image, 0));
  const Tensor z = sample_normal(rng, {n, model.config.latent_dim});
  const DecoderParams dp = with_test_scale(model, decode(model, z));
  return decoder_sample(model.config.decoder, dp, rng, mode);
}

Tensor reconstruct(const VaeModel& model, const Tensor& x, Rng& rng, SampleMode mode) {
  const Posterior post = encode(model, x);
  const Tensor z = reparameterize(post.mu, post.log_sigma, rng);
  const DecoderParams dp = with_test_scale(model, decode(model, z));
  return decoder_sample(model.config.decoder, dp, rng, mode);
}

}  // namespace svae
