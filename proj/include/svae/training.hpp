#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "svae/data.hpp"
#include "svae/rng.hpp"
#include "svae/vae.hpp"

namespace svae {

struct TrainConfig {
  ModelConfig model;
  ObjectiveMode objective = SigmaVaeOptimal{};
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  /// Evaluation hook period in steps; 0 fires only after the last step.
  std::size_t eval_every = 0;
  /// Decay of the running average of the batchwise optimal sigma.
  double sigma_decay = 0.99;
  /// Adds uniform noise of one intensity step to the float inputs.
  bool dequantize = false;

  void validate() const;
  /// validate() plus batch_size <= dataset size.
  void validate_for(const Dataset& dataset) const;
};

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(std::span<const Tensor> params);
};

/// One bias-corrected Adam update in place. Throws NumericInstability (and
/// leaves params and state untouched) when a gradient is not finite.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state, double lr);

struct StepRecord {
  std::uint64_t step = 0;  // 1-based index of the optimizer step
  std::size_t epoch = 0;   // 0-based epoch the step belongs to
  LossBreakdown loss;
  /// RMS of the running sigma after the step (OptimalSigma only).
  std::optional<double> running_sigma;
  bool skipped = false;  // non-finite step, no update applied
};

/// Everything that evolves during training; enough to resume bit-exactly.
struct TrainState {
  VaeModel model;
  AdamState adam;
  std::uint64_t step = 0;
  Rng noise_rng;
  std::size_t consecutive_failures = 0;
};

class Trainer {
 public:
  using Hook = std::function<void(const Trainer&, const StepRecord&)>;

  /// Fresh model initialised from config.seed.
  Trainer(TrainConfig config, const Dataset& train);
  /// Continues from a saved state.
  Trainer(TrainConfig config, const Dataset& train, TrainState state);

  const TrainConfig& config() const noexcept { return config_; }
  const TrainState& state() const noexcept { return state_; }
  const VaeModel& model() const noexcept { return state_.model; }

  std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }
  std::uint64_t total_steps() const noexcept { return steps_per_epoch_ * config_.epochs; }
  bool done() const noexcept { return state_.step >= total_steps(); }

  /// Batch indices of a step (0-based), from the seeded per-epoch permutation.
  std::vector<std::size_t> batch_indices(std::uint64_t step) const;

  StepRecord step();
  /// Runs to the end, calling hook after every eval_every-th step and after
  /// the final one.
  std::vector<StepRecord> run(const Hook& hook = {});

 private:
  TrainConfig config_;
  const Dataset& train_;
  TrainState state_;
  std::size_t steps_per_epoch_;
};

/// Seeded permutation of 0..n-1 for an epoch.
std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::size_t epoch, std::size_t n);

struct FitResult {
  VaeModel model;
  std::vector<StepRecord> log;
};

FitResult fit(const Dataset& train, const TrainConfig& config, const Trainer::Hook& hook = {});

}  // namespace svae
