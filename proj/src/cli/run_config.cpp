#include "svae/cli/run_config.hpp"

#include <fstream>

#include "svae/errors.hpp"

namespace svae::cli {

namespace {

std::string_view sample_mode_name(SampleMode m) { return m == SampleMode::Mean ? "mean" : "sample"; }

SampleMode parse_sample_mode(const std::string& s) {
  if (s == "mean") return SampleMode::Mean;
  if (s == "sample") return SampleMode::Sample;
  throw ContractViolation("output.sample_mode must be 'mean' or 'sample', got '" + s + "'");
}

template <typename T>
T field(const Json& j, const std::string& section, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(section + "." + key + ": " + e.what());
  }
}

template <typename T>
void maybe(const Json& j, const std::string& section, const char* key, T& out) {
  if (j.contains(key)) out = field<T>(j, section, key);
}

}  // namespace

void RunConfig::validate() const {
  if (const auto* s = std::get_if<SpriteConfig>(&data)) {
    s->validate();
    if (!(s->shape == train.model.image)) throw ContractViolation("model image shape differs from the sprite shape");
  }
  train.validate();
  if (eval.mi_samples == 1) throw ContractViolation("eval.mi_samples must be 0 (skip) or at least 2");
  if (eval.stderr_trials != 0 && eval.stderr_trials < 30) {
    throw ContractViolation("eval.stderr_trials must be 0 (skip) or at least 30");
  }
  if (eval.stderr_batch == 0) throw ContractViolation("eval.stderr_batch must be positive");
  for (double b : betas) {
    if (!(b > 0.0) || !std::isfinite(b)) throw ContractViolation("sweep betas must be positive");
  }
  if (output.columns == 0) throw ContractViolation("output.columns must be positive");
}

Json to_json(const DataSource& data) {
  if (const auto* s = std::get_if<SpriteConfig>(&data)) return Json{{"sprites", svae::to_json(*s)}};
  const auto& idx = std::get<IdxSource>(data);
  Json j{{"train_images", idx.train_images.string()}, {"test_images", idx.test_images.string()}};
  if (idx.train_labels) j["train_labels"] = idx.train_labels->string();
  if (idx.test_labels) j["test_labels"] = idx.test_labels->string();
  return Json{{"idx", j}};
}

DataSource data_source_from_json(const Json& j) {
  reject_unknown_keys(j, {"sprites", "idx"}, "data");
  if (j.contains("sprites") && j.contains("idx")) throw ContractViolation("data needs exactly one of sprites, idx");
  if (j.contains("idx")) {
    const Json& x = j.at("idx");
    reject_unknown_keys(x, {"train_images", "train_labels", "test_images", "test_labels"}, "data.idx");
    IdxSource idx;
    idx.train_images = field<std::string>(x, "data.idx", "train_images");
    idx.test_images = field<std::string>(x, "data.idx", "test_images");
    if (x.contains("train_labels")) idx.train_labels = field<std::string>(x, "data.idx", "train_labels");
    if (x.contains("test_labels")) idx.test_labels = field<std::string>(x, "data.idx", "test_labels");
    return idx;
  }
  SpriteConfig s;
  if (j.contains("sprites")) apply_json(j.at("sprites"), s);
  return s;
}

RunConfig run_config_from_json(const Json& j) {
  reject_unknown_keys(j, {"data", "model", "decoder", "objective", "train", "eval", "sweep", "output"}, "config");
  RunConfig c;
  if (j.contains("data")) c.data = data_source_from_json(j.at("data"));
  if (const auto* s = std::get_if<SpriteConfig>(&c.data)) c.train.model.image = s->shape;

  Json train_part = Json::object();
  for (const char* key : {"model", "decoder", "objective", "train"}) {
    if (j.contains(key)) train_part[key] = j.at(key);
  }
  apply_json(train_part, c.train);

  if (j.contains("eval")) {
    const Json& e = j.at("eval");
    reject_unknown_keys(e, {"mi_samples", "stderr_trials", "stderr_batch", "seed", "wall_time"}, "eval");
    maybe(e, "eval", "mi_samples", c.eval.mi_samples);
    maybe(e, "eval", "stderr_trials", c.eval.stderr_trials);
    maybe(e, "eval", "stderr_batch", c.eval.stderr_batch);
    maybe(e, "eval", "seed", c.eval.seed);
    maybe(e, "eval", "wall_time", c.record_wall_time);
  }
  if (j.contains("sweep")) {
    const Json& s = j.at("sweep");
    reject_unknown_keys(s, {"betas", "schemes"}, "sweep");
    maybe(s, "sweep", "betas", c.betas);
    if (s.contains("schemes")) {
      c.schemes.clear();
      for (const auto& name : field<std::vector<std::string>>(s, "sweep", "schemes")) {
        c.schemes.push_back(SharingScheme::parse(name));
      }
    }
  }
  if (j.contains("output")) {
    const Json& o = j.at("output");
    reject_unknown_keys(o, {"dir", "samples", "columns", "sample_mode"}, "output");
    if (o.contains("dir")) c.output.dir = field<std::string>(o, "output", "dir");
    maybe(o, "output", "samples", c.output.samples);
    maybe(o, "output", "columns", c.output.columns);
    if (o.contains("sample_mode")) c.output.sample_mode = parse_sample_mode(field<std::string>(o, "output", "sample_mode"));
  }
  return c;
}

Json to_json(const RunConfig& c) {
  Json j = svae::to_json(c.train);
  j["data"] = to_json(c.data);
  j["eval"] = {{"mi_samples", c.eval.mi_samples},
               {"stderr_trials", c.eval.stderr_trials},
               {"stderr_batch", c.eval.stderr_batch},
               {"seed", c.eval.seed},
               {"wall_time", c.record_wall_time}};
  Json schemes = Json::array();
  for (const auto& s : c.schemes) schemes.push_back(s.name());
  j["sweep"] = {{"betas", c.betas}, {"schemes", schemes}};
  j["output"] = {{"dir", c.output.dir.string()},
                 {"samples", c.output.samples},
                 {"columns", c.output.columns},
                 {"sample_mode", std::string(sample_mode_name(c.output.sample_mode))}};
  return j;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ContractViolation("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

LoadedData load_data(const DataSource& source) {
  if (const auto* s = std::get_if<SpriteConfig>(&source)) {
    SpriteSet set = gen_sprites(*s);
    return LoadedData{std::move(set.train), std::move(set.test)};
  }
  const auto& idx = std::get<IdxSource>(source);
  LoadedData d{load_idx(idx.train_images, idx.train_labels), load_idx(idx.test_images, idx.test_labels)};
  d.test.split = Split::Test;
  if (!(d.train.shape == d.test.shape)) throw ContractViolation("IDX train and test images differ in shape");
  return d;
}

}  // namespace svae::cli
