#include "svae/decoders.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "svae/errors.hpp"
#include "svae/ops.hpp"
#include "svae/special.hpp"

namespace svae {

namespace {

// Byte k sits at k / 255; interior bins extend half a step either side.
constexpr double kLevels = 255.0;
constexpr double kHalfBin = 0.5 / kLevels;

constexpr std::array<std::pair<DecoderVariant, std::string_view>, 9> kVariantNames = {{
    {DecoderVariant::UnitGaussian, "unit_gaussian"},
    {DecoderVariant::SharedSigma, "shared_sigma"},
    {DecoderVariant::PerPixelSigma, "per_pixel_sigma"},
    {DecoderVariant::OptimalSigma, "optimal_sigma"},
    {DecoderVariant::Bernoulli, "bernoulli"},
    {DecoderVariant::Categorical256, "categorical256"},
    {DecoderVariant::BitwiseCategorical, "bitwise_categorical"},
    {DecoderVariant::DiscretizedGaussian, "discretized_gaussian"},
    {DecoderVariant::DiscretizedLogisticMixture, "discretized_logistic_mixture"},
}};

constexpr std::array<std::pair<std::string_view, unsigned>, 7> kSchemeNames = {{
    {"shared", 0xF},
    {"per_image", 0xE},
    {"per_pixel", 0x0},
    {"per_location", 0x1},
    {"per_channel", 0xD},
    {"per_row", 0xB},
    {"per_column", 0x7},
}};

constexpr std::array<std::pair<std::string_view, PoolAxis>, 4> kAxisNames = {{
    {"batch", PoolAxis::Batch},
    {"channel", PoolAxis::Channel},
    {"row", PoolAxis::Row},
    {"column", PoolAxis::Column},
}};

const Tensor& require(const std::optional<Tensor>& t, const char* what) {
  if (!t) throw ContractViolation(std::string("decoder parameters are missing ") + what);
  return *t;
}

Shape without_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

void require_last(const Tensor& t, std::size_t n, const char* what) {
  if (t.rank() < 2 || t.shape().back() != n) {
    throw ContractViolation(std::string(what) + " needs a trailing axis of " + std::to_string(n) + ", got " +
                            to_string(t.shape()));
  }
}

// Bin bounds for every byte, shaped like the bytes with a trailing unit axis.
struct BinGeometry {
  Tensor lo;
  Tensor hi;
  std::vector<BinEdge> edges;  // per byte
};

BinGeometry bin_geometry(const Tensor& x_bytes) {
  const auto bytes = checked_bytes(x_bytes);
  Shape shape = x_bytes.shape();
  shape.push_back(1);
  BinGeometry g{Tensor(shape), Tensor(shape), std::vector<BinEdge>(bytes.size())};
  auto lo = g.lo.mutable_data();
  auto hi = g.hi.mutable_data();
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double center = static_cast<double>(bytes[i]) / kLevels;
    lo[i] = center - kHalfBin;
    hi[i] = center + kHalfBin;
    g.edges[i] = bytes[i] == 0 ? BinEdge::OpenBelow : bytes[i] == 255 ? BinEdge::OpenAbove : BinEdge::Interior;
  }
  return g;
}

std::vector<BinEdge> repeat_edges(const std::vector<BinEdge>& edges, std::size_t k) {
  std::vector<BinEdge> out;
  out.reserve(edges.size() * k);
  for (auto e : edges) out.insert(out.end(), k, e);
  return out;
}

special::IntervalMass byte_mass(CdfFamily family, double mu, double inv_scale, std::size_t byte) {
  const double center = static_cast<double>(byte) / kLevels;
  const double lo = (center - kHalfBin - mu) * inv_scale;
  const double hi = (center + kHalfBin - mu) * inv_scale;
  const bool below = byte == 0;
  const bool above = byte == 255;
  return family == CdfFamily::Normal ? special::normal_interval(lo, hi, below, above)
                                     : special::logistic_interval(lo, hi, below, above);
}

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

}  // namespace

std::string_view to_string(DecoderVariant variant) {
  for (const auto& [v, name] : kVariantNames) {
    if (v == variant) return name;
  }
  return "unknown";
}

DecoderVariant parse_decoder_variant(std::string_view name) {
  for (const auto& [v, n] : kVariantNames) {
    if (n == name) return v;
  }
  throw ContractViolation("unknown decoder variant '" + std::string(name) + "'");
}

bool is_gaussian(DecoderVariant v) {
  return v == DecoderVariant::UnitGaussian || v == DecoderVariant::SharedSigma || v == DecoderVariant::PerPixelSigma ||
         v == DecoderVariant::OptimalSigma;
}

bool is_discrete(DecoderVariant v) {
  return v == DecoderVariant::Categorical256 || v == DecoderVariant::BitwiseCategorical ||
         v == DecoderVariant::DiscretizedGaussian || v == DecoderVariant::DiscretizedLogisticMixture;
}

SharingScheme SharingScheme::from_mask(unsigned mask) {
  if (mask > 0xF) throw ContractViolation("sharing mask out of range");
  return SharingScheme(mask);
}

SharingScheme SharingScheme::parse(std::string_view text) {
  for (const auto& [name, mask] : kSchemeNames) {
    if (name == text) return SharingScheme(mask);
  }
  constexpr std::string_view prefix = "pool:";
  if (text.substr(0, prefix.size()) != prefix) {
    throw ContractViolation("unknown sharing scheme '" + std::string(text) + "'");
  }
  std::string_view rest = text.substr(prefix.size());
  unsigned mask = 0;
  if (rest == "none") return SharingScheme(0x0);
  while (!rest.empty()) {
    const auto plus = rest.find('+');
    const auto token = rest.substr(0, plus);
    bool found = false;
    for (const auto& [name, axis] : kAxisNames) {
      if (name == token) {
        mask |= static_cast<unsigned>(axis);
        found = true;
      }
    }
    if (!found) throw ContractViolation("unknown pooling axis '" + std::string(token) + "'");
    rest = plus == std::string_view::npos ? std::string_view{} : rest.substr(plus + 1);
  }
  return SharingScheme(mask);
}

std::string SharingScheme::name() const {
  for (const auto& [name, mask] : kSchemeNames) {
    if (mask == mask_) return std::string(name);
  }
  std::string out = "pool:";
  bool first = true;
  for (const auto& [name, axis] : kAxisNames) {
    if (!pools(axis)) continue;
    if (!first) out += '+';
    out += name;
    first = false;
  }
  return out;
}

std::size_t SharingScheme::variance_parameter_count(std::size_t channels, std::size_t rows, std::size_t cols) const {
  std::size_t n = 1;
  if (!pools(PoolAxis::Channel)) n *= channels;
  if (!pools(PoolAxis::Row)) n *= rows;
  if (!pools(PoolAxis::Column)) n *= cols;
  return n;
}

void ClipBounds::validate() const {
  if (!(lambda_min < lambda_max)) throw ContractViolation("clip bounds need lambda_min < lambda_max");
}

DecoderSpec DecoderSpec::make(DecoderVariant variant, std::optional<SharingScheme> sharing) {
  DecoderSpec spec;
  spec.variant = variant;
  if (variant == DecoderVariant::OptimalSigma) {
    spec.sharing = sharing.value_or(SharingScheme::shared());
  } else {
    spec.sharing = sharing;
  }
  return spec;
}

void DecoderSpec::validate() const {
  clip.validate();
  if ((variant == DecoderVariant::OptimalSigma) != sharing.has_value()) {
    throw ContractViolation("a sharing scheme is required for, and only for, the optimal_sigma decoder");
  }
  if (variant == DecoderVariant::DiscretizedLogisticMixture && mixture_components == 0) {
    throw ContractViolation("logistic mixture needs at least one component");
  }
}

std::size_t DecoderSpec::head_multiplier() const {
  switch (variant) {
    case DecoderVariant::PerPixelSigma:
      return 2;
    case DecoderVariant::Categorical256:
      return 256;
    case DecoderVariant::BitwiseCategorical:
      return 8;
    case DecoderVariant::DiscretizedLogisticMixture:
      return 3 * mixture_components;
    default:
      return 1;
  }
}

bool DecoderSpec::has_global_lambda() const {
  return variant == DecoderVariant::SharedSigma || variant == DecoderVariant::DiscretizedGaussian;
}

std::vector<std::size_t> checked_bytes(const Tensor& x_bytes) {
  std::vector<std::size_t> out(x_bytes.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x_bytes[i];
    if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) {
      throw ContractViolation("byte value " + std::to_string(v) + " is not an integer in 0..255");
    }
    out[i] = static_cast<std::size_t>(v);
  }
  return out;
}

Tensor gaussian_nll(const Tensor& x, const Tensor& mean, const Tensor& log_sigma) {
  if (x.shape() != mean.shape()) {
    throw ContractViolation("gaussian_nll: x " + to_string(x.shape()) + " vs mean " + to_string(mean.shape()));
  }
  const Tensor lambda = broadcast_to(log_sigma, x.shape());
  const Tensor inv_var = exp(scale(log_sigma, -2.0));
  const Tensor quad = scale(mul(square(sub(x, mean)), inv_var), 0.5);
  return sum_per_sample(add_scalar(add(lambda, quad), special::kLogSqrt2Pi));
}

Tensor soft_clip(const Tensor& lambda, const ClipBounds& bounds) {
  bounds.validate();
  const Tensor upper = add_scalar(neg(softplus(add_scalar(neg(lambda), bounds.lambda_max))), bounds.lambda_max);
  return add_scalar(softplus(add_scalar(upper, -bounds.lambda_min)), bounds.lambda_min);
}

Tensor optimal_log_sigma(const Tensor& x, const Tensor& mean, const SharingScheme& sharing, const ClipBounds& bounds) {
  bounds.validate();
  if (x.rank() != 4 || x.shape() != mean.shape()) {
    throw ContractViolation("optimal_log_sigma needs equal [N, C, H, W] shapes, got " + to_string(x.shape()) + " and " +
                            to_string(mean.shape()));
  }
  std::vector<std::size_t> axes;
  constexpr std::array<PoolAxis, 4> kOrder = {PoolAxis::Batch, PoolAxis::Channel, PoolAxis::Row, PoolAxis::Column};
  for (std::size_t d = 0; d < 4; ++d) {
    if (x.extent(d) == 0) throw ContractViolation("optimal_log_sigma over an empty sharing group");
    if (sharing.pools(kOrder[d])) axes.push_back(d);
  }
  const Tensor msq = svae::mean(square(sub(x.detach(), mean.detach())), axes, true);
  Tensor lambda(msq.shape());
  auto out = lambda.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double m = msq[i];
    const double l = m > 0.0 ? 0.5 * std::log(m) : bounds.lambda_min;
    out[i] = std::clamp(l, bounds.lambda_min, bounds.lambda_max);
  }
  return lambda;
}

Tensor bernoulli_nll(const Tensor& probs, const Tensor& x) {
  if (probs.shape() != x.shape()) {
    throw ContractViolation("bernoulli_nll: probs " + to_string(probs.shape()) + " vs x " + to_string(x.shape()));
  }
  const Tensor p = clamp(probs, kBernoulliEps, 1.0 - kBernoulliEps);
  const Tensor ll = add(mul(x, log(p)), mul(add_scalar(neg(x), 1.0), log(add_scalar(neg(p), 1.0))));
  return neg(sum_per_sample(ll));
}

Tensor categorical_nll(const Tensor& logits, const Tensor& x_bytes) {
  require_last(logits, 256, "categorical_nll");
  if (without_last(logits.shape()) != x_bytes.shape()) {
    throw ContractViolation("categorical_nll: logits " + to_string(logits.shape()) + " vs bytes " +
                            to_string(x_bytes.shape()));
  }
  const auto bytes = checked_bytes(x_bytes);
  return sum_per_sample(sub(logsumexp_last(logits), take_last(logits, bytes)));
}

Tensor bitwise_categorical_nll(const Tensor& bit_logits, const Tensor& x_bytes) {
  require_last(bit_logits, 8, "bitwise_categorical_nll");
  if (without_last(bit_logits.shape()) != x_bytes.shape()) {
    throw ContractViolation("bitwise_categorical_nll: logits " + to_string(bit_logits.shape()) + " vs bytes " +
                            to_string(x_bytes.shape()));
  }
  const auto bytes = checked_bytes(x_bytes);
  Tensor bits(bit_logits.shape());
  auto b = bits.mutable_data();
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    for (std::size_t j = 0; j < 8; ++j) b[i * 8 + j] = static_cast<double>((bytes[i] >> (7 - j)) & 1U);
  }
  return sum_per_sample(sub(softplus(bit_logits), mul(bits, bit_logits)));
}

Tensor discretized_logistic_mixture_nll(const Tensor& means, const Tensor& log_scales, const Tensor& mixture_logits,
                                        const Tensor& x_bytes) {
  if (means.shape() != log_scales.shape() || means.shape() != mixture_logits.shape() || means.rank() < 2) {
    throw ContractViolation("logistic mixture parameters need equal [B, ..., K] shapes");
  }
  if (without_last(means.shape()) != x_bytes.shape()) {
    throw ContractViolation("logistic mixture: parameters " + to_string(means.shape()) + " vs bytes " +
                            to_string(x_bytes.shape()));
  }
  const std::size_t k = means.shape().back();
  const BinGeometry g = bin_geometry(x_bytes);
  const Tensor inv_s = exp(neg(clamp(log_scales, kMinLogScale, std::numeric_limits<double>::infinity())));
  const Tensor lo = mul(sub(g.lo, means), inv_s);
  const Tensor hi = mul(sub(g.hi, means), inv_s);
  const auto edges = repeat_edges(g.edges, k);
  const Tensor log_mass = interval_log_mass(CdfFamily::Logistic, lo, hi, edges);
  const Tensor log_w = sub(mixture_logits, logsumexp_last(mixture_logits, true));
  return neg(sum_per_sample(logsumexp_last(add(log_w, log_mass))));
}

Tensor discretized_gaussian_nll(const Tensor& mean, const Tensor& log_sigma, const Tensor& x_bytes) {
  if (mean.shape() != x_bytes.shape()) {
    throw ContractViolation("discretized_gaussian_nll: mean " + to_string(mean.shape()) + " vs bytes " +
                            to_string(x_bytes.shape()));
  }
  const BinGeometry g = bin_geometry(x_bytes);
  const Tensor inv_sigma = broadcast_to(exp(neg(log_sigma)), mean.shape());
  const Tensor lo = mul(sub(reshape(g.lo, mean.shape()), mean), inv_sigma);
  const Tensor hi = mul(sub(reshape(g.hi, mean.shape()), mean), inv_sigma);
  return neg(sum_per_sample(interval_log_mass(CdfFamily::Normal, lo, hi, g.edges)));
}

Tensor discrete_nll(const DecoderSpec& spec, const DecoderParams& params, const Tensor& x_bytes) {
  switch (spec.variant) {
    case DecoderVariant::Categorical256:
      return categorical_nll(require(params.logits, "logits"), x_bytes);
    case DecoderVariant::BitwiseCategorical:
      return bitwise_categorical_nll(require(params.logits, "logits"), x_bytes);
    case DecoderVariant::DiscretizedLogisticMixture:
      return discretized_logistic_mixture_nll(require(params.component_means, "component means"),
                                              require(params.component_log_scales, "component log scales"),
                                              require(params.logits, "mixture logits"), x_bytes);
    case DecoderVariant::Bernoulli:
      throw ContractViolation("the Bernoulli decoder has no 256-level likelihood");
    default:
      return discretized_gaussian_nll(require(params.mean, "mean"), require(params.log_sigma, "log_sigma"), x_bytes);
  }
}

Tensor log_pmf_table(const DecoderSpec& spec, const DecoderParams& params) {
  switch (spec.variant) {
    case DecoderVariant::Bernoulli:
      throw ContractViolation("the Bernoulli decoder has no 256-level likelihood");
    case DecoderVariant::Categorical256: {
      const Tensor logits = require(params.logits, "logits").detach();
      require_last(logits, 256, "log_pmf_table");
      return sub(logits, logsumexp_last(logits, true));
    }
    case DecoderVariant::BitwiseCategorical: {
      const Tensor logits = require(params.logits, "logits").detach();
      require_last(logits, 8, "log_pmf_table");
      Shape shape = without_last(logits.shape());
      shape.push_back(256);
      Tensor table(shape);
      auto out = table.mutable_data();
      const std::size_t rows = logits.size() / 8;
      for (std::size_t r = 0; r < rows; ++r) {
        std::array<double, 8> on{}, off{};
        for (std::size_t j = 0; j < 8; ++j) {
          const double l = logits[r * 8 + j];
          on[j] = -special::softplus(-l);
          off[j] = -special::softplus(l);
        }
        for (std::size_t k = 0; k < 256; ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < 8; ++j) acc += ((k >> (7 - j)) & 1U) ? on[j] : off[j];
          out[r * 256 + k] = acc;
        }
      }
      return table;
    }
    case DecoderVariant::DiscretizedLogisticMixture: {
      const Tensor means = require(params.component_means, "component means").detach();
      const Tensor log_scales = require(params.component_log_scales, "component log scales").detach();
      const Tensor logits = require(params.logits, "mixture logits").detach();
      const Tensor log_w = sub(logits, logsumexp_last(logits, true));
      const std::size_t kc = means.shape().back();
      Shape shape = without_last(means.shape());
      shape.push_back(256);
      Tensor table(shape);
      auto out = table.mutable_data();
      const std::size_t rows = means.size() / kc;
      std::vector<double> terms(kc);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < 256; ++k) {
          for (std::size_t c = 0; c < kc; ++c) {
            const std::size_t i = r * kc + c;
            const double inv_s = std::exp(-std::max(log_scales[i], kMinLogScale));
            terms[c] = log_w[i] + byte_mass(CdfFamily::Logistic, means[i], inv_s, k).log_mass;
          }
          out[r * 256 + k] = log_sum_exp(terms);
        }
      }
      return table;
    }
    default: {
      const Tensor mean_t = require(params.mean, "mean").detach();
      const Tensor inv_sigma =
          broadcast_to(exp(neg(require(params.log_sigma, "log_sigma").detach())), mean_t.shape());
      Shape shape = mean_t.shape();
      shape.push_back(256);
      Tensor table(shape);
      auto out = table.mutable_data();
      for (std::size_t r = 0; r < mean_t.size(); ++r) {
        for (std::size_t k = 0; k < 256; ++k) {
          out[r * 256 + k] = byte_mass(CdfFamily::Normal, mean_t[r], inv_sigma[r], k).log_mass;
        }
      }
      return table;
    }
  }
}

Tensor decoder_sample(const DecoderSpec& spec, const DecoderParams& params, Rng& rng, SampleMode mode) {
  if (is_gaussian(spec.variant)) {
    const Tensor m = require(params.mean, "mean").detach();
    if (mode == SampleMode::Mean) return clamp(m, 0.0, 1.0);
    const Tensor sigma = broadcast_to(exp(require(params.log_sigma, "log_sigma").detach()), m.shape());
    return clamp(add(m, mul(sigma, sample_normal(rng, m.shape()))), 0.0, 1.0);
  }
  if (spec.variant == DecoderVariant::Bernoulli) {
    const Tensor p = clamp(require(params.mean, "mean").detach(), 0.0, 1.0);
    if (mode == SampleMode::Mean) return p;
    Tensor out(p.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = rng.uniform() < p[i] ? 1.0 : 0.0;
    return out;
  }
  const Tensor table = log_pmf_table(spec, params);
  Tensor out(without_last(table.shape()));
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < o.size(); ++r) {
    const double* row = table.data().data() + r * 256;
    if (mode == SampleMode::Mean) {
      double acc = 0.0;
      double total = 0.0;
      for (std::size_t k = 0; k < 256; ++k) {
        const double p = std::exp(row[k]);
        acc += p * static_cast<double>(k);
        total += p;
      }
      o[r] = std::clamp(acc / total / kLevels, 0.0, 1.0);
    } else {
      double total = 0.0;
      for (std::size_t k = 0; k < 256; ++k) total += std::exp(row[k]);
      const double u = rng.uniform() * total;
      double cum = 0.0;
      std::size_t pick = 255;
      for (std::size_t k = 0; k < 256; ++k) {
        cum += std::exp(row[k]);
        if (u < cum) {
          pick = k;
          break;
        }
      }
      o[r] = static_cast<double>(pick) / kLevels;
    }
  }
  return out;
}

}  // namespace svae
