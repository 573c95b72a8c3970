#include "svae/config_json.hpp"

#include <string>

#include "svae/errors.hpp"

namespace svae {

namespace {

template <typename T>
T get(const Json& j, std::string_view section, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string(section) + "." + key + ": " + e.what());
  }
}

template <typename T>
void maybe(const Json& j, std::string_view section, const char* key, T& out) {
  if (j.contains(key)) out = get<T>(j, section, key);
}

void require_object(const Json& j, std::string_view section) {
  if (!j.is_object()) throw ContractViolation(std::string(section) + " must be a JSON object");
}

std::size_t positive(std::size_t v, std::string_view section, const char* key) {
  if (v == 0) throw ContractViolation(std::string(section) + "." + key + " must be positive");
  return v;
}

Json tensor_json(const Tensor& t) { return Json{{"shape", t.shape()}, {"values", t.values()}}; }

Tensor tensor_from_json(const Json& j, std::string_view section) {
  if (j.is_number()) return Tensor({1, 1, 1, 1}, j.get<double>());
  require_object(j, section);
  reject_unknown_keys(j, {"shape", "values"}, section);
  return Tensor(get<Shape>(j, section, "shape"), get<std::vector<double>>(j, section, "values"));
}

}  // namespace

void reject_unknown_keys(const Json& object, std::initializer_list<std::string_view> allowed,
                         std::string_view section) {
  require_object(object, section);
  for (const auto& [key, value] : object.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ContractViolation("unknown key '" + key + "' in " + std::string(section));
  }
}

Json to_json(const SharingScheme& sharing) { return sharing.name(); }

Json to_json(const DecoderSpec& spec) {
  Json j{{"variant", std::string(to_string(spec.variant))},
         {"lambda_min", spec.clip.lambda_min},
         {"lambda_max", spec.clip.lambda_max},
         {"mixture_components", spec.mixture_components}};
  if (spec.sharing) j["sharing"] = to_json(*spec.sharing);
  return j;
}

Json to_json(const ModelConfig& config) {
  return Json{{"image", {{"channels", config.image.channels}, {"rows", config.image.rows}, {"cols", config.image.cols}}},
              {"latent_dim", config.latent_dim},
              {"hidden", config.hidden},
              {"activation", std::string(to_string(config.activation))}};
}

Json to_json(const ObjectiveMode& mode) {
  Json j{{"kind", objective_name(mode)}};
  if (const auto* b = std::get_if<BetaVae>(&mode)) j["beta"] = b->beta;
  if (const auto* f = std::get_if<SigmaVaeFixed>(&mode)) j["log_sigma"] = tensor_json(f->log_sigma);
  return j;
}

Json to_json(const SpriteConfig& c) {
  return Json{{"count", c.count},
              {"channels", c.shape.channels},
              {"rows", c.shape.rows},
              {"cols", c.shape.cols},
              {"min_extent", c.min_extent},
              {"max_extent", c.max_extent},
              {"noise_std", c.noise_std},
              {"background", c.background},
              {"foreground", c.foreground},
              {"seed", c.seed}};
}

Json to_json(const TrainConfig& c) {
  return Json{{"model", to_json(c.model)},
              {"decoder", to_json(c.model.decoder)},
              {"objective", to_json(c.objective)},
              {"train",
               {{"learning_rate", c.learning_rate},
                {"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"seed", c.seed},
                {"eval_every", c.eval_every},
                {"sigma_decay", c.sigma_decay},
                {"dequantize", c.dequantize}}}};
}

void apply_json(const Json& j, DecoderSpec& spec) {
  constexpr std::string_view s = "decoder";
  reject_unknown_keys(j, {"variant", "sharing", "lambda_min", "lambda_max", "mixture_components"}, s);
  if (j.contains("variant")) {
    const auto variant = parse_decoder_variant(get<std::string>(j, s, "variant"));
    if (variant != spec.variant) {
      spec.variant = variant;
      spec.sharing = variant == DecoderVariant::OptimalSigma ? std::optional(SharingScheme::shared()) : std::nullopt;
    }
  }
  if (j.contains("sharing")) {
    if (spec.variant != DecoderVariant::OptimalSigma) {
      throw ContractViolation("decoder.sharing is only valid for the optimal_sigma variant");
    }
    spec.sharing = SharingScheme::parse(get<std::string>(j, s, "sharing"));
  }
  maybe(j, s, "lambda_min", spec.clip.lambda_min);
  maybe(j, s, "lambda_max", spec.clip.lambda_max);
  if (j.contains("mixture_components")) {
    spec.mixture_components = positive(get<std::size_t>(j, s, "mixture_components"), s, "mixture_components");
  }
  spec.validate();
}

void apply_json(const Json& j, ModelConfig& config) {
  constexpr std::string_view s = "model";
  reject_unknown_keys(j, {"image", "latent_dim", "hidden", "activation"}, s);
  if (j.contains("image")) {
    const Json& img = j.at("image");
    reject_unknown_keys(img, {"channels", "rows", "cols"}, "model.image");
    maybe(img, "model.image", "channels", config.image.channels);
    maybe(img, "model.image", "rows", config.image.rows);
    maybe(img, "model.image", "cols", config.image.cols);
  }
  maybe(j, s, "latent_dim", config.latent_dim);
  maybe(j, s, "hidden", config.hidden);
  if (j.contains("activation")) config.activation = parse_activation(get<std::string>(j, s, "activation"));
}

ObjectiveMode objective_from_json(const Json& j, const DecoderSpec& decoder) {
  constexpr std::string_view s = "objective";
  reject_unknown_keys(j, {"kind", "beta", "log_sigma"}, s);
  const std::string kind = j.contains("kind") ? get<std::string>(j, s, "kind") : "";
  auto only = [&](std::initializer_list<std::string_view> keys) { reject_unknown_keys(j, keys, s); };
  if (kind.empty()) return default_objective(decoder);
  if (kind == "beta_vae") {
    only({"kind", "beta"});
    BetaVae b;
    maybe(j, s, "beta", b.beta);
    return b;
  }
  if (kind == "sigma_vae_shared") {
    only({"kind"});
    return SigmaVaeShared{};
  }
  if (kind == "sigma_vae_optimal") {
    only({"kind"});
    return SigmaVaeOptimal{decoder.sharing.value_or(SharingScheme::shared())};
  }
  if (kind == "plain_elbo") {
    only({"kind"});
    return PlainElbo{};
  }
  if (kind == "sigma_vae_fixed") {
    if (!j.contains("log_sigma")) throw ContractViolation("objective.log_sigma is required for sigma_vae_fixed");
    return SigmaVaeFixed{tensor_from_json(j.at("log_sigma"), "objective.log_sigma")};
  }
  throw ContractViolation("unknown objective kind '" + kind + "'");
}

void apply_json(const Json& j, SpriteConfig& c) {
  constexpr std::string_view s = "sprites";
  reject_unknown_keys(j,
                      {"count", "channels", "rows", "cols", "min_extent", "max_extent", "noise_std", "background",
                       "foreground", "seed"},
                      s);
  maybe(j, s, "count", c.count);
  maybe(j, s, "channels", c.shape.channels);
  maybe(j, s, "rows", c.shape.rows);
  maybe(j, s, "cols", c.shape.cols);
  maybe(j, s, "min_extent", c.min_extent);
  maybe(j, s, "max_extent", c.max_extent);
  maybe(j, s, "noise_std", c.noise_std);
  maybe(j, s, "background", c.background);
  maybe(j, s, "foreground", c.foreground);
  maybe(j, s, "seed", c.seed);
}

void apply_json(const Json& j, TrainConfig& c) {
  reject_unknown_keys(j, {"model", "decoder", "objective", "train"}, "config");
  if (j.contains("model")) apply_json(j.at("model"), c.model);
  if (j.contains("decoder")) apply_json(j.at("decoder"), c.model.decoder);
  if (j.contains("objective")) {
    c.objective = objective_from_json(j.at("objective"), c.model.decoder);
  } else if (j.contains("decoder")) {
    c.objective = default_objective(c.model.decoder);
  }
  if (j.contains("train")) {
    constexpr std::string_view s = "train";
    const Json& t = j.at("train");
    reject_unknown_keys(t, {"learning_rate", "batch_size", "epochs", "seed", "eval_every", "sigma_decay", "dequantize"},
                        s);
    maybe(t, s, "learning_rate", c.learning_rate);
    maybe(t, s, "batch_size", c.batch_size);
    maybe(t, s, "epochs", c.epochs);
    maybe(t, s, "seed", c.seed);
    maybe(t, s, "eval_every", c.eval_every);
    maybe(t, s, "sigma_decay", c.sigma_decay);
    maybe(t, s, "dequantize", c.dequantize);
  }
}

}  // namespace svae
