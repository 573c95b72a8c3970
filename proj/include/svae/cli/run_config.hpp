#pragma once

#include <filesystem>
#include <optional>
#include <variant>
#include <vector>

#include "svae/config_json.hpp"
#include "svae/data.hpp"
#include "svae/metrics.hpp"
#include "svae/training.hpp"

namespace svae::cli {

struct IdxSource {
  std::filesystem::path train_images;
  std::optional<std::filesystem::path> train_labels;
  std::filesystem::path test_images;
  std::optional<std::filesystem::path> test_labels;
};

using DataSource = std::variant<SpriteConfig, IdxSource>;

struct OutputConfig {
  std::filesystem::path dir = "out";
  std::size_t samples = 64;
  std::size_t columns = 8;
  SampleMode sample_mode = SampleMode::Mean;
};

struct RunConfig {
  DataSource data = SpriteConfig{};
  TrainConfig train;
  EvalOptions eval;
  /// Fills the wall_ms column; off by default so reruns stay byte-identical.
  bool record_wall_time = false;
  std::vector<double> betas = {0.01, 0.1, 1.0, 10.0};
  std::vector<SharingScheme> schemes = {SharingScheme::shared(), SharingScheme::per_image(),
                                        SharingScheme::per_pixel()};
  OutputConfig output;

  /// Checks every section; throws ContractViolation.
  void validate() const;
};

/// Sections: data, model, decoder, objective, train, eval, sweep, output.
/// Unknown keys anywhere are rejected.
RunConfig run_config_from_json(const Json& j);
Json to_json(const RunConfig& config);
Json to_json(const DataSource& data);
DataSource data_source_from_json(const Json& j);

RunConfig load_run_config(const std::filesystem::path& path);

struct LoadedData {
  Dataset train;
  Dataset test;
};

LoadedData load_data(const DataSource& source);

}  // namespace svae::cli
