#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace pmi {

/// 8-bit image, rows top to bottom, channels interleaved (gray or R,G,B).
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Raster() = default;
  Raster(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill) {}

  bool empty() const { return pixels.empty(); }

  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool operator==(const Raster&) const = default;
};

/// Reads PNG, JPEG or BMP. Gray images give 1 channel, colour images 3 (RGB
/// order); an alpha channel is dropped.
Raster read_image(const std::filesystem::path& path);

/// Encoding follows the extension (.png, .jpg/.jpeg, .bmp).
void write_image(const Raster& image, const std::filesystem::path& path);

}  // namespace pmi
