#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "svae/checkpoint.hpp"
#include "svae/errors.hpp"
#include "svae/training.hpp"
#include "test_support.hpp"

using namespace svae;

namespace {

SpriteSet tiny_sprites(std::uint64_t seed = 3) {
  SpriteConfig s;
  s.count = 200;
  s.shape = {1, 8, 8};
  s.min_extent = 2;
  s.max_extent = 5;
  s.seed = seed;
  return gen_sprites(s);
}

TrainConfig tiny_config(DecoderVariant v = DecoderVariant::OptimalSigma) {
  TrainConfig c;
  c.model.image = {1, 8, 8};
  c.model.latent_dim = 4;
  c.model.hidden = {16};
  c.model.decoder = DecoderSpec::make(v);
  c.objective = default_objective(c.model.decoder);
  c.batch_size = 32;
  c.epochs = 2;
  c.seed = 11;
  return c;
}

void expect_same_params(const VaeModel& a, const VaeModel& b) {
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    EXPECT_EQ(a.params[i].value.values(), b.params[i].value.values()) << a.params[i].name;
  }
  EXPECT_EQ(a.running_sigma.values(), b.running_sigma.values());
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParamsButCounts) {
  std::vector<Tensor> p{Tensor::vector({1.0, -2.0})};
  std::vector<Tensor> g{Tensor({2})};
  AdamState s = AdamState::zeros_like(p);
  adam_step(p, g, s, 1e-3);
  EXPECT_EQ(p[0].values(), (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Tensor> p{Tensor::vector({0.0})};
  std::vector<Tensor> g{Tensor::vector({0.5})};
  AdamState s = AdamState::zeros_like(p);
  adam_step(p, g, s, 1e-3);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(p[0][0], -1e-3 * 0.5 / (0.5 + 1e-8), 1e-18);
}

TEST(Adam, MatchesHandComputedSecondStep) {
  std::vector<Tensor> p{Tensor::vector({0.3})};
  AdamState s = AdamState::zeros_like(p);
  std::vector<Tensor> g1{Tensor::vector({0.5})}, g2{Tensor::vector({-0.2})};
  adam_step(p, g1, s, 0.01);
  adam_step(p, g2, s, 0.01);
  double m = 0.0, v = 0.0, theta = 0.3;
  int t = 0;
  for (double g : {0.5, -0.2}) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    theta -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(p[0][0], theta, 1e-15);
}

TEST(Adam, NonFiniteGradientLeavesStateUntouched) {
  std::vector<Tensor> p{Tensor::vector({1.0, 2.0})};
  std::vector<Tensor> g{Tensor::vector({0.1, std::nan("")})};
  AdamState s = AdamState::zeros_like(p);
  EXPECT_THROW(adam_step(p, g, s, 1e-3), NumericInstability);
  EXPECT_EQ(p[0].values(), (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(s.step, 0u);
  EXPECT_EQ(s.m[0].values(), (std::vector<double>{0.0, 0.0}));
}

TEST(EpochPermutation, IsSeededPermutation) {
  auto a = epoch_permutation(4, 0, 50);
  auto b = epoch_permutation(4, 0, 50);
  auto c = epoch_permutation(4, 1, 50);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  std::sort(c.begin(), c.end());
  std::vector<std::size_t> expected(50);
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(c, expected);
}

TEST(TrainConfig, Validation) {
  auto set = tiny_sprites();
  TrainConfig c = tiny_config();
  c.batch_size = 1000;
  EXPECT_THROW(Trainer(c, set.train), ContractViolation);
  c = tiny_config();
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ContractViolation);
  c = tiny_config();
  c.sigma_decay = 1.0;
  EXPECT_THROW(c.validate(), ContractViolation);
  c = tiny_config(DecoderVariant::Bernoulli);
  c.objective = BetaVae{1.0};
  EXPECT_THROW(c.validate(), ContractViolation);
  c = tiny_config();
  c.model.image = {1, 4, 4};
  EXPECT_THROW(Trainer(c, set.train), ContractViolation);
}

TEST(Trainer, ZeroEpochsReturnsInitialModel) {
  auto set = tiny_sprites();
  TrainConfig c = tiny_config();
  c.epochs = 0;
  int calls = 0;
  FitResult r = fit(set.train, c, [&](const Trainer&, const StepRecord& rec) {
    ++calls;
    EXPECT_TRUE(rec.skipped);
  });
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(calls, 1);
  expect_same_params(r.model, VaeModel::create(c.model, c.seed));
}

TEST(Trainer, DeterministicTrajectories) {
  auto set = tiny_sprites();
  const TrainConfig c = tiny_config();
  FitResult a = fit(set.train, c);
  FitResult b = fit(set.train, c);
  expect_same_params(a.model, b.model);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss.total, b.log[i].loss.total);
}

TEST(Trainer, StepCountsAndHooks) {
  auto set = tiny_sprites();
  TrainConfig c = tiny_config();
  c.eval_every = 3;
  std::vector<std::uint64_t> fired;
  FitResult r = fit(set.train, c, [&](const Trainer&, const StepRecord& rec) { fired.push_back(rec.step); });
  // 160 training images / 32 = 5 steps per epoch.
  ASSERT_EQ(r.log.size(), 10u);
  EXPECT_EQ(r.log.front().step, 1u);
  EXPECT_EQ(r.log.back().epoch, 1u);
  EXPECT_EQ(fired, (std::vector<std::uint64_t>{3, 6, 9, 10}));
}

TEST(Trainer, LossDecreasesOnSprites) {
  auto set = tiny_sprites();
  TrainConfig c = tiny_config();
  c.epochs = 8;
  c.learning_rate = 3e-3;
  FitResult r = fit(set.train, c);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    first += r.log[i].loss.total;
    last += r.log[r.log.size() - 1 - i].loss.total;
  }
  EXPECT_LT(last, first);
}

TEST(Trainer, RunningSigmaStartsAtFirstBatchAndStaysInBounds) {
  auto set = tiny_sprites();
  TrainConfig c = tiny_config();
  Trainer t(c, set.train);
  EXPECT_FALSE(t.model().running_sigma_initialized);
  StepRecord first = t.step();
  ASSERT_TRUE(first.running_sigma.has_value());
  EXPECT_NEAR(*first.running_sigma, *first.loss.sigma, 1e-12);
  for (int i = 0; i < 4; ++i) {
    StepRecord rec = t.step();
    EXPECT_GE(*rec.running_sigma, std::exp(-6.0));
    EXPECT_LE(*rec.running_sigma, 1.0);
  }
}

TEST(Trainer, SharedSigmaLearnsGlobalLambda) {
  auto set = tiny_sprites();
  TrainConfig c = tiny_config(DecoderVariant::SharedSigma);
  FitResult r = fit(set.train, c);
  EXPECT_NE(r.model.param("global_lambda")[0], 0.0);
  EXPECT_FALSE(r.log.back().running_sigma.has_value());
}

TEST(Trainer, AbortsAfterThreeNonFiniteSteps) {
  auto set = tiny_sprites();
  TrainConfig c = tiny_config();
  TrainState s;
  s.model = VaeModel::create(c.model, c.seed);
  s.model.param("decoder.1.bias").mutable_data()[0] = std::nan("");
  s.adam = AdamState::zeros_like(s.model.values());
  Trainer t(c, set.train, s);
  EXPECT_TRUE(t.step().skipped);
  EXPECT_TRUE(t.step().skipped);
  try {
    t.step();
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("optimal_sigma"), std::string::npos);
    EXPECT_NE(msg.find("step 3"), std::string::npos);
  }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto set = tiny_sprites();
  TrainConfig c = tiny_config();
  c.epochs = 1;
  Trainer t(c, set.train);
  t.run();
  const Json extra{{"note", "x"}};
  const auto bytes = serialize_checkpoint(c, t.state(), extra);
  const Checkpoint ck = parse_checkpoint(bytes);
  EXPECT_EQ(ck.extra, extra);
  EXPECT_EQ(serialize_checkpoint(ck.config, ck.state, ck.extra), bytes);
  const auto dir = svae::test::scratch_dir("ckpt");
  save_checkpoint(dir / "a.ckpt", c, t.state(), extra);
  const Checkpoint loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "b.ckpt", loaded.config, loaded.state, loaded.extra);
  EXPECT_EQ(svae::test::read_file(dir / "a.ckpt"), svae::test::read_file(dir / "b.ckpt"));
  EXPECT_EQ(bytes, svae::test::read_file(dir / "a.ckpt"));
}

TEST(Checkpoint, ResumeIsBitExact) {
  auto set = tiny_sprites();
  TrainConfig c = tiny_config();
  c.dequantize = true;
  FitResult straight = fit(set.train, c);

  Trainer first(c, set.train);
  for (int i = 0; i < 7; ++i) first.step();
  const Checkpoint ck = parse_checkpoint(serialize_checkpoint(c, first.state()));
  Trainer resumed(ck.config, set.train, ck.state);
  resumed.run();
  expect_same_params(straight.model, resumed.model());
  EXPECT_EQ(resumed.state().adam.step, 10u);
}

TEST(Checkpoint, CorruptionIsDetected) {
  auto set = tiny_sprites();
  TrainConfig c = tiny_config();
  Trainer t(c, set.train);
  t.step();
  const auto bytes = serialize_checkpoint(c, t.state());
  for (std::size_t pos : {std::size_t{20}, bytes.size() / 2, bytes.size() - 10}) {
    auto bad = bytes;
    bad[pos] ^= 0x40;
    EXPECT_THROW(parse_checkpoint(bad), CheckpointError) << pos;
  }
  auto truncated = bytes;
  truncated.resize(bytes.size() - 1);
  EXPECT_THROW(parse_checkpoint(truncated), CheckpointError);
  auto short_header = std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 10);
  EXPECT_THROW(parse_checkpoint(short_header), CheckpointError);
  auto wrong_magic = bytes;
  wrong_magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint(wrong_magic), CheckpointError);
  auto wrong_version = bytes;
  wrong_version[8] = 2;
  try {
    parse_checkpoint(wrong_version);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), IoError);
}

TEST(Checkpoint, HeaderLayout) {
  auto set = tiny_sprites();
  TrainConfig c = tiny_config();
  Trainer t(c, set.train);
  const auto bytes = serialize_checkpoint(c, t.state());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "SVAECKPT");
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[9] | bytes[10] | bytes[11], 0);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[12 + i]) << (8 * i);
  const Json manifest = Json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(len));
  EXPECT_TRUE(manifest.contains("arrays"));
  EXPECT_EQ(manifest.at("step"), 0);
}
