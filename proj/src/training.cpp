#include "svae/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "svae/errors.hpp"
#include "svae/ops.hpp"

namespace svae {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kNoiseStream = 0x4e4f;
constexpr std::size_t kMaxConsecutiveFailures = 3;

double rms(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.data()) acc += v * v;
  return std::sqrt(acc / static_cast<double>(t.size()));
}

/// sqrt of the batch-axis mean of sigma^2, with the batch axis kept at 1.
Tensor batch_sigma(const Tensor& log_sigma) {
  Tensor sigma = mean(exp(scale(log_sigma.detach(), 2.0)), {0}, true);
  for (double& v : sigma.mutable_data()) v = std::sqrt(v);
  return sigma;
}

void update_running_sigma(VaeModel& model, const Tensor& log_sigma, double decay) {
  const Tensor fresh = batch_sigma(log_sigma);
  if (fresh.shape() != model.running_sigma.shape()) {
    throw ContractViolation("running sigma shape " + to_string(model.running_sigma.shape()) + " vs batch estimate " +
                            to_string(fresh.shape()));
  }
  const ClipBounds& clip = model.config.decoder.clip;
  const double lo = std::exp(clip.lambda_min);
  const double hi = std::exp(clip.lambda_max);
  auto run = model.running_sigma.mutable_data();
  for (std::size_t i = 0; i < run.size(); ++i) {
    const double next = model.running_sigma_initialized ? decay * run[i] + (1.0 - decay) * fresh[i] : fresh[i];
    run[i] = std::clamp(next, lo, hi);
  }
  model.running_sigma_initialized = true;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  check_objective(model, objective);
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ContractViolation("learning_rate must be positive");
  }
  if (batch_size == 0) throw ContractViolation("batch_size must be positive");
  if (!(sigma_decay >= 0.0 && sigma_decay < 1.0)) throw ContractViolation("sigma_decay must lie in [0, 1)");
}

void TrainConfig::validate_for(const Dataset& dataset) const {
  validate();
  if (dataset.shape != model.image) throw ContractViolation("dataset image shape differs from the model's");
  if (batch_size > dataset.count) {
    throw ContractViolation("batch_size " + std::to_string(batch_size) + " exceeds dataset size " +
                            std::to_string(dataset.count));
  }
}

AdamState AdamState::zeros_like(std::span<const Tensor> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw ContractViolation("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].shape() != params[k].shape()) throw ContractViolation("adam_step: gradient shape mismatch");
    if (!grads[k].all_finite()) {
      throw NumericInstability("non-finite gradient for parameter tensor " + std::to_string(k));
    }
  }
  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].mutable_data();
    auto m = state.m[k].mutable_data();
    auto v = state.v[k].mutable_data();
    const auto g = grads[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = AdamState::kBeta1 * m[i] + (1.0 - AdamState::kBeta1) * g[i];
      v[i] = AdamState::kBeta2 * v[i] + (1.0 - AdamState::kBeta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + AdamState::kEps);
    }
  }
  ++state.step;
}

std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, kShuffleStream, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
  return perm;
}

Trainer::Trainer(TrainConfig config, const Dataset& train)
    : Trainer(config, train, [&] {
        TrainState s;
        s.model = VaeModel::create(config.model, config.seed);
        s.adam = AdamState::zeros_like(s.model.values());
        s.noise_rng = Rng(derive_seed(config.seed, kNoiseStream));
        return s;
      }()) {}

Trainer::Trainer(TrainConfig config, const Dataset& train, TrainState state)
    : config_(std::move(config)), train_(train), state_(std::move(state)), steps_per_epoch_(0) {
  config_.validate_for(train_);
  if (!(state_.model.config == config_.model)) throw ContractViolation("trainer state belongs to another model");
  steps_per_epoch_ = train_.count / config_.batch_size;
}

std::vector<std::size_t> Trainer::batch_indices(std::uint64_t step) const {
  const std::size_t epoch = static_cast<std::size_t>(step / steps_per_epoch_);
  const std::size_t offset = static_cast<std::size_t>(step % steps_per_epoch_);
  const auto perm = epoch_permutation(config_.seed, epoch, train_.count);
  const auto begin = perm.begin() + static_cast<std::ptrdiff_t>(offset * config_.batch_size);
  return std::vector<std::size_t>(begin, begin + static_cast<std::ptrdiff_t>(config_.batch_size));
}

StepRecord Trainer::step() {
  if (done()) throw ContractViolation("training already finished");
  const auto indices = batch_indices(state_.step);
  Batch batch = make_batch(train_, indices);
  if (config_.dequantize) {
    auto x = batch.x.mutable_data();
    for (double& v : x) v = std::clamp(v + (state_.noise_rng.uniform() - 0.5) / 255.0, 0.0, 1.0);
  }
  const Tensor eps = sample_normal(state_.noise_rng, {config_.batch_size, config_.model.latent_dim});

  StepRecord rec;
  rec.step = state_.step + 1;
  rec.epoch = static_cast<std::size_t>(state_.step / steps_per_epoch_);
  std::string failure;
  try {
    Tape tape;
    std::vector<Tensor> leaves;
    for (const auto& p : state_.model.params) leaves.push_back(tape.leaf(p.value));
    LossResult res = elbo_loss(config_.model, leaves, batch, config_.objective, eps);
    const auto grads = tape.backward(res.loss);
    std::vector<Tensor> values = state_.model.values();
    adam_step(values, grads, state_.adam, config_.learning_rate);
    state_.model.set_values(values);
    if (res.optimal_log_sigma) update_running_sigma(state_.model, *res.optimal_log_sigma, config_.sigma_decay);
    rec.loss = res.breakdown;
    state_.consecutive_failures = 0;
  } catch (const NumericInstability& e) {
    rec.skipped = true;
    failure = e.what();
    ++state_.consecutive_failures;
  }
  if (config_.model.decoder.variant == DecoderVariant::OptimalSigma && state_.model.running_sigma_initialized) {
    rec.running_sigma = rms(state_.model.running_sigma);
  }
  ++state_.step;
  if (state_.consecutive_failures >= kMaxConsecutiveFailures) {
    throw TrainingAborted("training aborted: " + std::to_string(kMaxConsecutiveFailures) +
                          " consecutive non-finite steps with the " +
                          std::string(to_string(config_.model.decoder.variant)) + " decoder at step " +
                          std::to_string(rec.step) + " (" + failure + ")");
  }
  return rec;
}

std::vector<StepRecord> Trainer::run(const Hook& hook) {
  std::vector<StepRecord> log;
  if (done()) {
    if (hook) {
      StepRecord rec;
      rec.step = state_.step;
      rec.epoch = config_.epochs;
      rec.skipped = true;
      hook(*this, rec);
    }
    return log;
  }
  while (!done()) {
    log.push_back(step());
    const StepRecord& rec = log.back();
    const bool periodic = config_.eval_every > 0 && rec.step % config_.eval_every == 0;
    if (hook && (periodic || done())) hook(*this, rec);
  }
  return log;
}

FitResult fit(const Dataset& train, const TrainConfig& config, const Trainer::Hook& hook) {
  Trainer trainer(config, train);
  auto log = trainer.run(hook);
  return FitResult{trainer.model(), std::move(log)};
}

}  // namespace svae
