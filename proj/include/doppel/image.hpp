#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace doppel {

// Interleaved (row, column, channel) float canvas with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {}

  bool empty() const { return height <= 0 || width <= 0; }

  float& at(int row, int col, int ch) {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  float at(int row, int col, int ch) const {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Binary single-channel canvas; every value is 0 or 1.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int row, int col) {
    return data[static_cast<std::size_t>(row) * width + col];
  }
  std::uint8_t at(int row, int col) const {
    return data[static_cast<std::size_t>(row) * width + col];
  }

  std::size_t popcount() const;

  friend bool operator==(const Mask&, const Mask&) = default;
};

// Reads an image file as 3-channel RGB in [0, 1]. Grayscale input is
// replicated to three channels and alpha is dropped.
Image load_image(const std::filesystem::path& path);

// Writes an RGB or grayscale image as 8-bit; the format follows the extension.
void save_image(const std::filesystem::path& path, const Image& image);

}  // namespace doppel
