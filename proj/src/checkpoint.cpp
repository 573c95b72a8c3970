#include "svae/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string_view>

#include "svae/errors.hpp"

namespace svae {

namespace {

constexpr std::string_view kMagic = "SVAECKPT";

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::vector<std::uint8_t>& in, std::size_t offset) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in[offset + i]) << (8 * i);
  return v;
}

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1U << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

struct NamedArray {
  std::string name;
  const Tensor* tensor;
};

std::vector<NamedArray> arrays_of(const TrainState& s) {
  std::vector<NamedArray> out;
  for (const auto& p : s.model.params) out.push_back({p.name, &p.value});
  for (std::size_t i = 0; i < s.adam.m.size(); ++i) out.push_back({"adam.m." + s.model.params[i].name, &s.adam.m[i]});
  for (std::size_t i = 0; i < s.adam.v.size(); ++i) out.push_back({"adam.v." + s.model.params[i].name, &s.adam.v[i]});
  out.push_back({"running_sigma", &s.model.running_sigma});
  return out;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const TrainConfig& config, const TrainState& state, const Json& extra) {
  if (state.adam.m.size() != state.model.params.size() || state.adam.v.size() != state.model.params.size()) {
    throw ContractViolation("optimizer state does not match the model parameters");
  }
  const auto arrays = arrays_of(state);
  Json listing = Json::array();
  std::size_t offset = 0;
  for (const auto& a : arrays) {
    listing.push_back({{"name", a.name}, {"shape", a.tensor->shape()}, {"offset", offset}});
    offset += a.tensor->size() * sizeof(double);
  }
  const Json manifest{{"config", to_json(config)},
                      {"extra", extra},
                      {"arrays", listing},
                      {"rng_state", state.noise_rng.state()},
                      {"step", state.step},
                      {"adam_step", state.adam.step},
                      {"consecutive_failures", state.consecutive_failures},
                      {"running_sigma_initialized", state.model.running_sigma_initialized}};
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset + 4);
  for (const auto& a : arrays) {
    for (double v : a.tensor->data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  put_le<std::uint32_t>(out, crc32_of(out.data(), out.size()));
  return out;
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  constexpr std::size_t kHeader = 8 + 4 + 8;
  if (bytes.size() < kHeader + 4) throw CheckpointError("checkpoint truncated: header incomplete");
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t body = bytes.size() - 4;
  if (get_le<std::uint32_t>(bytes, body) != crc32_of(bytes.data(), body)) {
    throw CheckpointError("checkpoint checksum mismatch (file corrupted or truncated)");
  }
  const auto manifest_len = get_le<std::uint64_t>(bytes, 12);
  if (manifest_len > body - kHeader) throw CheckpointError("checkpoint truncated: manifest incomplete");

  Checkpoint ck;
  try {
    const Json manifest = Json::parse(bytes.begin() + kHeader, bytes.begin() + static_cast<std::ptrdiff_t>(kHeader + manifest_len));
    apply_json(manifest.at("config"), ck.config);
    ck.config.validate();
    ck.extra = manifest.at("extra");

    TrainState& s = ck.state;
    s.model = VaeModel::create(ck.config.model, 0);
    s.adam = AdamState::zeros_like(s.model.values());
    s.model.running_sigma_initialized = manifest.at("running_sigma_initialized").get<bool>();
    s.step = manifest.at("step").get<std::uint64_t>();
    s.adam.step = manifest.at("adam_step").get<std::uint64_t>();
    s.consecutive_failures = manifest.at("consecutive_failures").get<std::size_t>();
    s.noise_rng.restore(manifest.at("rng_state").get<std::string>());

    const auto arrays = arrays_of(s);
    const Json& listing = manifest.at("arrays");
    if (listing.size() != arrays.size()) throw CheckpointError("checkpoint array count does not match the model");
    std::size_t pos = kHeader + manifest_len;
    for (std::size_t i = 0; i < arrays.size(); ++i) {
      const Json& entry = listing.at(i);
      if (entry.at("name").get<std::string>() != arrays[i].name ||
          entry.at("shape").get<Shape>() != arrays[i].tensor->shape()) {
        throw CheckpointError("checkpoint array " + std::to_string(i) + " does not match " + arrays[i].name);
      }
      Tensor& target = const_cast<Tensor&>(*arrays[i].tensor);
      const std::size_t n = target.size();
      if (pos + n * 8 > body) throw CheckpointError("checkpoint truncated in array " + arrays[i].name);
      auto data = target.mutable_data();
      for (std::size_t k = 0; k < n; ++k) data[k] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos + 8 * k));
      pos += n * 8;
    }
    if (pos != body) throw CheckpointError("checkpoint has unexpected trailing data");
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const TrainState& state,
                     const Json& extra) {
  const auto bytes = serialize_checkpoint(config, state, extra);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_checkpoint(bytes);
}

}  // namespace svae
