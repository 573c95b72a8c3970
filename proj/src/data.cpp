#include "svae/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "svae/errors.hpp"
#include "svae/rng.hpp"

namespace svae {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset, const std::string& file) {
  if (offset + 4 > buf.size()) throw ParseError(file + ": truncated header", buf.size());
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) buf.push_back(static_cast<std::uint8_t>((v >> shift) & 0xFF));
}

Tensor gather(const Dataset& d, std::span<const std::size_t> indices, double factor) {
  const std::size_t dim = d.shape.dim();
  Tensor out({indices.size(), d.shape.channels, d.shape.rows, d.shape.cols});
  auto o = out.mutable_data();
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const auto img = d.image(indices[n]);
    for (std::size_t i = 0; i < dim; ++i) o[n * dim + i] = static_cast<double>(img[i]) * factor;
  }
  return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "unknown";
}

std::span<const std::uint8_t> Dataset::image(std::size_t index) const {
  if (index >= count) throw ContractViolation("image index " + std::to_string(index) + " out of range");
  const std::size_t dim = shape.dim();
  return std::span<const std::uint8_t>(bytes).subspan(index * dim, dim);
}

Tensor Dataset::floats(std::span<const std::size_t> indices) const { return gather(*this, indices, 1.0 / 255.0); }

Tensor Dataset::floats() const { return floats(all_indices(count)); }

Tensor Dataset::byte_values(std::span<const std::size_t> indices) const { return gather(*this, indices, 1.0); }

Tensor Dataset::byte_values() const { return byte_values(all_indices(count)); }

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.shape = shape;
  out.split = split;
  out.count = indices.size();
  out.bytes.reserve(indices.size() * shape.dim());
  for (std::size_t i : indices) {
    const auto img = image(i);
    out.bytes.insert(out.bytes.end(), img.begin(), img.end());
    if (!labels.empty()) out.labels.push_back(labels[i]);
  }
  return out;
}

void SpriteConfig::validate() const {
  if (count == 0) throw ContractViolation("sprite count must be positive");
  if (shape.channels == 0 || shape.rows == 0 || shape.cols == 0) throw ContractViolation("empty sprite image shape");
  if (min_extent == 0 || min_extent > max_extent) throw ContractViolation("sprite extents need 0 < min <= max");
  if (max_extent > shape.rows || max_extent > shape.cols) {
    throw ContractViolation("sprite max extent does not fit inside the image");
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ContractViolation("sprite noise must be finite and >= 0");
}

SpriteSet gen_sprites(const SpriteConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const ImageShape& s = config.shape;
  const std::size_t dim = s.dim();
  const std::size_t plane = s.rows * s.cols;
  std::vector<std::uint8_t> bytes(config.count * dim);
  std::vector<Rect> rects(config.count);
  const std::size_t span = config.max_extent - config.min_extent + 1;
  for (std::size_t n = 0; n < config.count; ++n) {
    Rect r;
    r.height = config.min_extent + rng.uniform_index(span);
    r.width = config.min_extent + rng.uniform_index(span);
    r.top = rng.uniform_index(s.rows - r.height + 1);
    r.left = rng.uniform_index(s.cols - r.width + 1);
    rects[n] = r;
    const Tensor noise = sample_normal(rng, {dim});
    for (std::size_t c = 0; c < s.channels; ++c) {
      for (std::size_t y = 0; y < s.rows; ++y) {
        for (std::size_t x = 0; x < s.cols; ++x) {
          const bool inside = y >= r.top && y < r.top + r.height && x >= r.left && x < r.left + r.width;
          const std::size_t i = c * plane + y * s.cols + x;
          const double base = inside ? config.foreground : config.background;
          const double v = std::clamp(std::round(base + config.noise_std * noise[i]), 0.0, 255.0);
          bytes[n * dim + i] = static_cast<std::uint8_t>(v);
        }
      }
    }
  }

  const std::size_t n_train = config.count * 8 / 10;
  const std::size_t n_val = config.count / 10;
  auto make = [&](std::size_t begin, std::size_t end, Split split, std::vector<Rect>& out_rects) {
    Dataset d;
    d.shape = s;
    d.split = split;
    d.count = end - begin;
    d.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(begin * dim),
                   bytes.begin() + static_cast<std::ptrdiff_t>(end * dim));
    out_rects.assign(rects.begin() + static_cast<std::ptrdiff_t>(begin),
                     rects.begin() + static_cast<std::ptrdiff_t>(end));
    return d;
  };
  SpriteSet set;
  set.train = make(0, n_train, Split::Train, set.train_rects);
  set.val = make(n_train, n_train + n_val, Split::Val, set.val_rects);
  set.test = make(n_train + n_val, config.count, Split::Test, set.test_rects);
  return set;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::optional<std::filesystem::path>& labels_path) {
  const auto buf = read_file(images_path);
  const std::string name = images_path.string();
  const std::uint32_t magic = read_be32(buf, 0, name);
  if (magic != kIdxImageMagic) throw ParseError(name + ": bad IDX image magic", 0);
  const std::size_t n = read_be32(buf, 4, name);
  const std::size_t rows = read_be32(buf, 8, name);
  const std::size_t cols = read_be32(buf, 12, name);
  const std::size_t header = 16;
  const std::size_t expected = header + n * rows * cols;
  if (buf.size() < expected) throw ParseError(name + ": truncated image payload", buf.size());
  if (buf.size() > expected) throw ParseError(name + ": trailing bytes after image payload", expected);

  Dataset d;
  d.shape = ImageShape{1, rows, cols};
  d.count = n;
  d.bytes.assign(buf.begin() + header, buf.end());

  if (labels_path) {
    const auto lbuf = read_file(*labels_path);
    const std::string lname = labels_path->string();
    if (read_be32(lbuf, 0, lname) != kIdxLabelMagic) throw ParseError(lname + ": bad IDX label magic", 0);
    const std::size_t ln = read_be32(lbuf, 4, lname);
    if (ln != n) throw ParseError(lname + ": label count does not match image count", 4);
    if (lbuf.size() < 8 + ln) throw ParseError(lname + ": truncated label payload", lbuf.size());
    if (lbuf.size() > 8 + ln) throw ParseError(lname + ": trailing bytes after label payload", 8 + ln);
    d.labels.assign(lbuf.begin() + 8, lbuf.end());
  }
  return d;
}

void write_idx(const std::filesystem::path& images_path, const Dataset& dataset,
               const std::optional<std::filesystem::path>& labels_path) {
  if (dataset.shape.channels != 1) throw ContractViolation("IDX image files hold single-channel images");
  std::vector<std::uint8_t> buf;
  buf.reserve(16 + dataset.bytes.size());
  put_be32(buf, kIdxImageMagic);
  put_be32(buf, static_cast<std::uint32_t>(dataset.count));
  put_be32(buf, static_cast<std::uint32_t>(dataset.shape.rows));
  put_be32(buf, static_cast<std::uint32_t>(dataset.shape.cols));
  buf.insert(buf.end(), dataset.bytes.begin(), dataset.bytes.end());
  write_file(images_path, buf);

  if (labels_path) {
    if (dataset.labels.size() != dataset.count) throw ContractViolation("dataset has no labels to write");
    std::vector<std::uint8_t> lbuf;
    put_be32(lbuf, kIdxLabelMagic);
    put_be32(lbuf, static_cast<std::uint32_t>(dataset.count));
    lbuf.insert(lbuf.end(), dataset.labels.begin(), dataset.labels.end());
    write_file(*labels_path, lbuf);
  }
}

void write_image_grid(const std::filesystem::path& path, const Tensor& images, std::size_t columns) {
  if (images.rank() != 4) throw ContractViolation("image grid needs [n, C, H, W], got " + to_string(images.shape()));
  const std::size_t n = images.extent(0);
  const std::size_t c = images.extent(1);
  const std::size_t h = images.extent(2);
  const std::size_t w = images.extent(3);
  if (c != 1 && c != 3) throw ContractViolation("image grid needs 1 or 3 channels");
  if (n == 0 || columns == 0) throw ContractViolation("image grid needs at least one image and one column");
  if (!images.all_finite()) throw ContractViolation("image grid values must be finite");

  const std::size_t grid_rows = (n + columns - 1) / columns;
  const std::size_t width = columns * (w + 1) - 1;
  const std::size_t height = grid_rows * (h + 1) - 1;
  std::vector<std::uint8_t> pixels(width * height * c, 0);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t oy = (k / columns) * (h + 1);
    const std::size_t ox = (k % columns) * (w + 1);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double v = images[((k * c + ch) * h + y) * w + x];
          const double byte = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
          pixels[((oy + y) * width + ox + x) * c + ch] = static_cast<std::uint8_t>(byte);
        }
      }
    }
  }
  const std::string header =
      std::string(c == 1 ? "P5" : "P6") + "\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), pixels.begin(), pixels.end());
  write_file(path, out);
}

}  // namespace svae
