#include "svae/cli/commands.hpp"

#include <chrono>
#include <fstream>
#include <ostream>

#include "CLI11.hpp"
#include "svae/checkpoint.hpp"
#include "svae/cli/csv.hpp"
#include "svae/errors.hpp"
#include "svae/ops.hpp"

namespace svae::cli {

namespace {

constexpr std::uint64_t kEvalStream = 0x4556;
constexpr std::uint64_t kSampleStream = 0x534d;
constexpr std::uint64_t kReconStream = 0x5243;
constexpr std::uint64_t kMiStream = 0x4d49;

const std::vector<std::string> kSweepColumns = {
    "run",  "beta", "scheme", "variance_params", "seed", "status", "neg_elbo_test", "neg_elbo_test_discretized",
    "distortion", "rate", "mi", "marginal_kl", "rate_mc", "sigma", "beta_eff_text", "beta_eff_eq7", "error"};

const std::vector<std::string> kMiColumns = {"samples", "mi", "marginal_kl", "rate_mc", "rate_analytic", "mi_stderr"};

EvalOptions resolved_eval(const RunConfig& c) {
  EvalOptions e = c.eval;
  e.seed = derive_seed(c.train.seed, kEvalStream, c.eval.seed);
  return e;
}

std::string image_ext(const ImageShape& s) { return s.channels == 3 ? ".ppm" : ".pgm"; }

void prepare_out(const RunConfig& config) {
  std::error_code ec;
  std::filesystem::create_directories(config.output.dir, ec);
  if (ec) throw IoError("cannot create output directory " + config.output.dir.string() + ": " + ec.message());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

/// Resolves the image shape from the data and validates the whole config.
RunConfig resolve(RunConfig config, const LoadedData& data) {
  config.train.model.image = data.train.shape;
  config.validate();
  config.train.validate_for(data.train);
  return config;
}

Json record_json(const StepRecord& rec) {
  Json j{{"step", rec.step}, {"skipped", rec.skipped}};
  if (!rec.skipped) {
    j["total"] = rec.loss.total;
    j["distortion"] = rec.loss.distortion;
    j["rate"] = rec.loss.rate;
    if (rec.loss.sigma) j["sigma"] = *rec.loss.sigma;
  }
  return j;
}

StepRecord record_from_json(const Json& j) {
  StepRecord rec;
  rec.step = j.at("step").get<std::uint64_t>();
  rec.skipped = j.at("skipped").get<bool>();
  if (!rec.skipped) {
    rec.loss.total = j.at("total").get<double>();
    rec.loss.distortion = j.at("distortion").get<double>();
    rec.loss.rate = j.at("rate").get<double>();
    if (j.contains("sigma")) rec.loss.sigma = j.at("sigma").get<double>();
  }
  return rec;
}

std::vector<std::string> metrics_row(const StepRecord& rec, std::size_t steps_per_epoch, const MetricsRecord& m,
                                     std::optional<double> wall_ms) {
  auto opt = [](bool present, double v) { return present ? format_number(v) : std::string(); };
  const std::optional<double> sigma = m.sigma ? m.sigma : (rec.skipped ? std::nullopt : rec.loss.sigma);
  std::optional<double> bt, be;
  if (sigma && *sigma > 0.0) {
    bt = effective_beta(*sigma, BetaConvention::Text);
    be = effective_beta(*sigma, BetaConvention::Eq7);
  }
  const bool has_mi = m.mi_samples > 0;
  return {std::to_string(rec.step),
          std::to_string(rec.step / steps_per_epoch),
          opt(!rec.skipped, rec.loss.total),
          opt(!rec.skipped, rec.loss.distortion),
          opt(!rec.skipped, rec.loss.rate),
          format_optional(sigma),
          format_optional(bt),
          format_optional(be),
          format_number(m.neg_elbo),
          format_optional(m.neg_elbo_discretized),
          opt(has_mi, m.mi),
          opt(has_mi, m.marginal_kl),
          format_optional(m.sigma_stderr_inner_pct),
          format_optional(m.sigma_stderr_outer_pct),
          format_optional(wall_ms)};
}

void write_samples(const VaeModel& model, const RunConfig& config, std::size_t n, const std::filesystem::path& path) {
  if (n == 0) return;
  Rng rng(derive_seed(config.train.seed, kSampleStream));
  write_image_grid(path, generate(model, n, rng, config.output.sample_mode), config.output.columns);
}

void write_reconstructions(const VaeModel& model, const RunConfig& config, const Dataset& test,
                           const std::filesystem::path& path) {
  const std::size_t k = std::min(config.output.columns, test.count);
  if (k == 0) return;
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  const Tensor x = test.floats(idx);
  Rng rng(derive_seed(config.train.seed, kReconStream));
  const Tensor r = reconstruct(model, x, rng, config.output.sample_mode);
  const Tensor both[] = {x, r};
  write_image_grid(path, concat(both, 0), k);
}

void write_sweep(const std::filesystem::path& path, const std::vector<SweepRow>& rows, std::ostream& log) {
  CsvWriter csv(path, kSweepColumns);
  for (const auto& r : rows) {
    const MetricsRecord& m = r.metrics;
    auto val = [&](double v) { return r.ok ? format_number(v) : std::string(); };
    auto oval = [&](const std::optional<double>& v) { return r.ok ? format_optional(v) : std::string(); };
    csv.row({r.run, format_optional(r.beta), r.scheme,
             r.variance_params ? std::to_string(*r.variance_params) : std::string(), std::to_string(r.seed),
             r.ok ? "ok" : "FAILED", val(m.neg_elbo), oval(m.neg_elbo_discretized), val(m.distortion), val(m.rate),
             val(m.mi), val(m.marginal_kl), val(m.rate_mc), oval(m.sigma), oval(m.beta_eff_text),
             oval(m.beta_eff_eq7), r.error});
    log << r.run << " beta=" << format_optional(r.beta) << " scheme=" << r.scheme << ": "
        << (r.ok ? "neg_elbo=" + format_number(m.neg_elbo) + " mi=" + format_number(m.mi) +
                       " marginal_kl=" + format_number(m.marginal_kl)
                 : "FAILED " + r.error)
        << '\n';
  }
}

}  // namespace

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {
      "step",          "epoch",         "total", "distortion", "rate", "sigma", "beta_eff_text", "beta_eff_eq7",
      "neg_elbo_test", "neg_elbo_test_discretized", "mi", "marginal_kl", "sigma_stderr_inner_pct",
      "sigma_stderr_outer_pct", "wall_ms"};
  return cols;
}

void cmd_train(const RunConfig& raw, std::ostream& log) {
  const LoadedData data = load_data(raw.data);
  const RunConfig config = resolve(raw, data);
  prepare_out(config);
  const auto& dir = config.output.dir;
  write_text(dir / "config.json", to_json(config).dump(2) + "\n");

  const EvalOptions eval = resolved_eval(config);
  CsvWriter csv(dir / "metrics.csv", metrics_columns());
  const auto start = std::chrono::steady_clock::now();
  Trainer trainer(config.train, data.train);
  StepRecord last;
  trainer.run([&](const Trainer& t, const StepRecord& rec) {
    const MetricsRecord m = evaluate(t.model(), data.test, eval);
    std::optional<double> wall;
    if (config.record_wall_time) {
      wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    csv.row(metrics_row(rec, t.steps_per_epoch(), m, wall));
    last = rec;
    log << "step " << rec.step << " neg_elbo_test " << format_number(m.neg_elbo) << '\n';
  });

  const Json extra{{"data", to_json(config.data)}, {"eval", to_json(config)["eval"]}, {"last_record", record_json(last)}};
  save_checkpoint(dir / "checkpoint.ckpt", config.train, trainer.state(), extra);
  const std::string ext = image_ext(config.train.model.image);
  write_samples(trainer.model(), config, config.output.samples, dir / ("samples" + ext));
  write_reconstructions(trainer.model(), config, data.test, dir / ("reconstructions" + ext));
}

void cmd_eval(const RunConfig& raw, const std::filesystem::path& checkpoint, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  RunConfig config = raw;
  config.train = ck.config;
  config.data = data_source_from_json(ck.extra.at("data"));
  const Json& e = ck.extra.at("eval");
  config.eval.mi_samples = e.at("mi_samples").get<std::size_t>();
  config.eval.stderr_trials = e.at("stderr_trials").get<std::size_t>();
  config.eval.stderr_batch = e.at("stderr_batch").get<std::size_t>();
  config.eval.seed = e.at("seed").get<std::uint64_t>();
  const LoadedData data = load_data(config.data);
  config = resolve(config, data);
  prepare_out(config);

  const MetricsRecord m = evaluate(ck.state.model, data.test, resolved_eval(config));
  const StepRecord rec = record_from_json(ck.extra.at("last_record"));
  const std::size_t spe = data.train.count / config.train.batch_size;
  CsvWriter csv(config.output.dir / "eval.csv", metrics_columns());
  csv.row(metrics_row(rec, spe, m, std::nullopt));
  log << "neg_elbo_test " << format_number(m.neg_elbo) << " mi " << format_number(m.mi) << " marginal_kl "
      << format_number(m.marginal_kl) << '\n';
}

void cmd_sample(const RunConfig& raw, const std::filesystem::path& checkpoint, std::optional<std::size_t> n,
                std::ostream& log) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  RunConfig config = raw;
  config.train = ck.config;
  prepare_out(config);
  const std::size_t count = n.value_or(config.output.samples);
  const auto path = config.output.dir / ("samples" + image_ext(ck.config.model.image));
  if (count == 0) throw ContractViolation("--n must be positive for sample");
  write_samples(ck.state.model, config, count, path);
  log << "wrote " << count << " samples to " << path.string() << '\n';
}

void cmd_sweep_beta(const RunConfig& raw, std::ostream& log) {
  const LoadedData data = load_data(raw.data);
  const RunConfig config = resolve(raw, data);
  prepare_out(config);
  write_text(config.output.dir / "config.json", to_json(config).dump(2) + "\n");
  const auto rows = beta_sweep(data.train, data.test, config.betas, config.train, resolved_eval(config));
  write_sweep(config.output.dir / "sweep_beta.csv", rows, log);
}

void cmd_share_sweep(const RunConfig& raw, std::ostream& log) {
  const LoadedData data = load_data(raw.data);
  const RunConfig config = resolve(raw, data);
  prepare_out(config);
  write_text(config.output.dir / "config.json", to_json(config).dump(2) + "\n");
  const auto rows = sharing_sweep(data.train, data.test, config.schemes, config.train, resolved_eval(config));
  write_sweep(config.output.dir / "share_sweep.csv", rows, log);
}

void cmd_mi(const RunConfig& raw, const std::optional<std::filesystem::path>& checkpoint,
            std::optional<std::size_t> n, std::ostream& log) {
  RunConfig config = raw;
  std::optional<VaeModel> model;
  if (checkpoint) {
    Checkpoint ck = load_checkpoint(*checkpoint);
    config.train = ck.config;
    config.data = data_source_from_json(ck.extra.at("data"));
    model = std::move(ck.state.model);
  }
  const LoadedData data = load_data(config.data);
  config = resolve(config, data);
  prepare_out(config);
  if (!model) model = fit(data.train, config.train).model;
  Rng rng(derive_seed(resolved_eval(config).seed, kMiStream));
  const MiEstimate mi = mi_marginal_kl(*model, data.test, n.value_or(config.eval.mi_samples), rng);
  CsvWriter csv(config.output.dir / "mi.csv", kMiColumns);
  csv.row({std::to_string(mi.samples), format_number(mi.mi), format_number(mi.marginal_kl), format_number(mi.rate),
           format_number(mi.rate_analytic), format_number(mi.mi_stderr)});
  log << "mi " << format_number(mi.mi) << " marginal_kl " << format_number(mi.marginal_kl) << " rate "
      << format_number(mi.rate) << '\n';
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Variational autoencoders with calibrated decoders"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, out_dir, checkpoint;
  std::uint64_t seed = 0;
  std::vector<double> betas;
  std::size_t n = 0;
  auto* o_config = app.add_option("--config", config_path, "JSON run configuration");
  auto* o_out = app.add_option("--out", out_dir, "Output directory");
  auto* o_seed = app.add_option("--seed", seed, "Master seed");
  auto* o_betas = app.add_option("--betas", betas, "Comma-separated betas for sweep-beta")->delimiter(',');
  auto* o_n = app.add_option("--n", n, "Sample count (sample) or posterior count (mi)");
  auto* o_ckpt = app.add_option("--checkpoint", checkpoint, "Checkpoint file (eval, sample, mi)");
  const std::pair<const char*, const char*> commands[] = {
      {"train", "Train one model and write metrics, checkpoint, samples"},
      {"eval", "Evaluate a checkpoint on its test split"},
      {"sample", "Write a grid of generated images from a checkpoint"},
      {"sweep-beta", "Unit-Gaussian beta-VAE per beta plus one optimal-sigma run"},
      {"share-sweep", "One optimal-sigma run per variance sharing scheme"},
      {"mi", "Mutual information and marginal KL of a checkpoint (or a fresh run)"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    RunConfig config = *o_config ? load_run_config(config_path) : RunConfig{};
    if (*o_out) config.output.dir = out_dir;
    if (*o_seed) config.train.seed = seed;
    if (*o_betas) config.betas = betas;
    const std::optional<std::size_t> count = *o_n ? std::optional(n) : std::nullopt;
    const std::optional<std::filesystem::path> ckpt =
        *o_ckpt ? std::optional<std::filesystem::path>(checkpoint) : std::nullopt;
    if ((command == "eval" || command == "sample") && !ckpt) {
      err << "svae " << command << ": --checkpoint is required\n";
      return kExitUsage;
    }
    if (command == "train") {
      cmd_train(config, out);
    } else if (command == "eval") {
      cmd_eval(config, *ckpt, out);
    } else if (command == "sample") {
      cmd_sample(config, *ckpt, count, out);
    } else if (command == "sweep-beta") {
      cmd_sweep_beta(config, out);
    } else if (command == "share-sweep") {
      cmd_share_sweep(config, out);
    } else {
      cmd_mi(config, ckpt, count, out);
    }
  } catch (const TrainingAborted& e) {
    err << "svae " << command << ": " << e.what() << '\n';
    return kExitNumeric;
  } catch (const NumericInstability& e) {
    err << "svae " << command << ": " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "svae " << command << ": " << e.what() << '\n';
    return kExitIo;
  } catch (const CheckpointError& e) {
    err << "svae " << command << ": " << e.what() << '\n';
    return kExitIo;
  } catch (const ParseError& e) {
    err << "svae " << command << ": " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "svae " << command << ": " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace svae::cli
