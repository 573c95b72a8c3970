#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "svae/tensor.hpp"

namespace svae {

struct ImageShape {
  std::size_t channels = 1;
  std::size_t rows = 16;
  std::size_t cols = 16;

  /// Data dimensionality C * H * W.
  std::size_t dim() const noexcept { return channels * rows * cols; }
  bool operator==(const ImageShape&) const = default;
};

enum class Split { Train, Val, Test };

std::string_view to_string(Split split);

/// Byte images [N, C, H, W]. Intensity byte k corresponds to the float k / 255.
struct Dataset {
  std::vector<std::uint8_t> bytes;
  std::size_t count = 0;
  ImageShape shape;
  Split split = Split::Train;
  std::vector<std::uint8_t> labels;  // empty when unlabelled

  bool empty() const noexcept { return count == 0; }

  /// Float view [n, C, H, W] of the selected images; no argument selects all.
  Tensor floats(std::span<const std::size_t> indices) const;
  Tensor floats() const;
  /// Byte values as integer-valued doubles, [n, C, H, W].
  Tensor byte_values(std::span<const std::size_t> indices) const;
  Tensor byte_values() const;

  /// Bytes of one image.
  std::span<const std::uint8_t> image(std::size_t index) const;

  Dataset subset(std::span<const std::size_t> indices) const;
};

struct SpriteConfig {
  std::size_t count = 4000;
  ImageShape shape;
  std::size_t min_extent = 3;
  std::size_t max_extent = 10;
  /// Standard deviation of additive noise, in intensity units out of 255.
  double noise_std = 8.0;
  std::uint8_t background = 32;
  std::uint8_t foreground = 224;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SpriteConfig&) const = default;
};

struct Rect {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t area() const noexcept { return height * width; }
};

struct SpriteSet {
  Dataset train;
  Dataset val;
  Dataset test;
  std::vector<Rect> train_rects;
  std::vector<Rect> val_rects;
  std::vector<Rect> test_rects;
};

/// Noisy bright rectangles on a dark background, split 80/10/10 in
/// generation order.
SpriteSet gen_sprites(const SpriteConfig& config);

/// Reads an IDX image file (magic 0x00000803, N x H x W bytes) and an
/// optional IDX label file (magic 0x00000801).
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::optional<std::filesystem::path>& labels_path = std::nullopt);

/// Writes the images of a single-channel dataset as an IDX image file, and
/// its labels when present and a path is given.
void write_idx(const std::filesystem::path& images_path, const Dataset& dataset,
               const std::optional<std::filesystem::path>& labels_path = std::nullopt);

/// Tiles images [n, C, H, W] (C = 1 or 3, values in [0, 1]) row-major into a
/// binary PGM/PPM with one-pixel separators of intensity 0.
void write_image_grid(const std::filesystem::path& path, const Tensor& images, std::size_t columns);

}  // namespace svae
