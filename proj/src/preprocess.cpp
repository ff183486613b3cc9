#include "pmi/preprocess.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace pmi {
namespace {

std::atomic<std::uint64_t> g_augment_calls{0};

/// Bilinear sample with clamped taps; (x, y) in pixel-centre coordinates.
inline float sample_clamped(const float* plane, int w, int h, float x, float y) {
  x = std::clamp(x, 0.0f, static_cast<float>(w - 1));
  y = std::clamp(y, 0.0f, static_cast<float>(h - 1));
  int x0 = static_cast<int>(x);
  int y0 = static_cast<int>(y);
  int x1 = std::min(x0 + 1, w - 1);
  int y1 = std::min(y0 + 1, h - 1);
  float fx = x - static_cast<float>(x0);
  float fy = y - static_cast<float>(y0);
  float top = plane[y0 * w + x0] + fx * (plane[y0 * w + x1] - plane[y0 * w + x0]);
  float bottom = plane[y1 * w + x0] + fx * (plane[y1 * w + x1] - plane[y1 * w + x0]);
  return top + fy * (bottom - top);
}

/// Planar float copy of an interleaved raster.
std::vector<float> to_planes(const Raster& img) {
  std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  std::vector<float> planes(n * img.channels);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < img.channels; ++c) planes[c * n + i] = img.pixels[i * img.channels + c];
  return planes;
}

Raster from_planes(const std::vector<float>& planes, int w, int h, int channels) {
  Raster out(w, h, channels);
  std::size_t n = static_cast<std::size_t>(w) * h;
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < channels; ++c) {
      float v = std::clamp(planes[c * n + i], 0.0f, 255.0f);
      out.pixels[i * channels + c] = static_cast<std::uint8_t>(std::lround(v));
    }
  return out;
}

/// Maps an output grid onto a source window [x0, x0 + side) x [y0, y0 + side).
Raster resample_window(const Raster& img, double x0, double y0, double side_x, double side_y,
                       int out_w, int out_h) {
  auto planes = to_planes(img);
  std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  std::vector<float> out(static_cast<std::size_t>(out_w) * out_h * img.channels);
  std::size_t m = static_cast<std::size_t>(out_w) * out_h;
  double sx = side_x / out_w;
  double sy = side_y / out_h;
  for (int c = 0; c < img.channels; ++c) {
    const float* plane = planes.data() + c * n;
    float* dst = out.data() + c * m;
    for (int j = 0; j < out_h; ++j) {
      auto y = static_cast<float>(y0 + (j + 0.5) * sy - 0.5);
      for (int i = 0; i < out_w; ++i) {
        auto x = static_cast<float>(x0 + (i + 0.5) * sx - 0.5);
        dst[j * out_w + i] = sample_clamped(plane, img.width, img.height, x, y);
      }
    }
  }
  return from_planes(out, out_w, out_h, img.channels);
}

void hflip_planes(std::vector<float>& planes, int w, int h, int channels) {
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < h; ++y) {
      float* row = planes.data() + (static_cast<std::size_t>(c) * h + y) * w;
      std::reverse(row, row + w);
    }
}

std::vector<float> rotate_planes(const std::vector<float>& planes, int w, int h, int channels,
                                 double degrees) {
  std::vector<float> out(planes.size());
  double theta = degrees * std::numbers::pi / 180.0;
  double cs = std::cos(theta);
  double sn = std::sin(theta);
  double cx = (w - 1) / 2.0;
  double cy = (h - 1) / 2.0;
  std::size_t n = static_cast<std::size_t>(w) * h;
  for (int c = 0; c < channels; ++c) {
    const float* src = planes.data() + c * n;
    float* dst = out.data() + c * n;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        // Inverse map: counter-clockwise rotation of the content by `degrees`.
        double dx = x - cx;
        double dy = y - cy;
        auto sx = static_cast<float>(cs * dx - sn * dy + cx);
        auto sy = static_cast<float>(sn * dx + cs * dy + cy);
        dst[y * w + x] = sample_clamped(src, w, h, sx, sy);
      }
  }
  return out;
}

void clamp_planes(std::vector<float>& planes) {
  for (auto& v : planes) v = std::clamp(v, 0.0f, 255.0f);
}

void adjust_brightness(std::vector<float>& planes, double factor) {
  for (auto& v : planes) v = static_cast<float>(v * factor);
  clamp_planes(planes);
}

void adjust_contrast(std::vector<float>& planes, int w, int h, int channels, double factor) {
  std::size_t n = static_cast<std::size_t>(w) * h;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (channels == 3)
      sum += 0.299 * planes[i] + 0.587 * planes[n + i] + 0.114 * planes[2 * n + i];
    else
      sum += planes[i];
  }
  double mean = sum / static_cast<double>(n);
  for (auto& v : planes) v = static_cast<float>(mean + (v - mean) * factor);
  clamp_planes(planes);
}

/// Blends with the 3x3 smoothing kernel [1 1 1; 1 5 1; 1 1 1] / 13; border
/// pixels have no smoothed counterpart and are left as is.
void adjust_sharpness(std::vector<float>& planes, int w, int h, int channels, double factor) {
  if (w < 3 || h < 3) return;
  std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<float> out(planes);
  for (int c = 0; c < channels; ++c) {
    const float* src = planes.data() + c * n;
    float* dst = out.data() + c * n;
    for (int y = 1; y < h - 1; ++y)
      for (int x = 1; x < w - 1; ++x) {
        float s = 0.0f;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) s += src[(y + dy) * w + (x + dx)];
        s += 4.0f * src[y * w + x];
        float smooth = s / 13.0f;
        dst[y * w + x] = static_cast<float>(smooth + (src[y * w + x] - smooth) * factor);
      }
  }
  planes.swap(out);
  clamp_planes(planes);
}

}  // namespace

void CropSpec::validate() const {
  if (target_side != 224 && target_side != 299)
    throw Error("crop target_side must be 224 or 299, got " + std::to_string(target_side));
  if (!(margin_factor >= 1.0)) throw Error("crop margin_factor must be >= 1");
}

void AugmentPolicy::validate() const {
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw Error("hflip_prob must lie in [0, 1]");
  if (!(rotation_range >= 0.0)) throw Error("rotation_range must be >= 0");
  for (double j : {brightness_jitter, contrast_jitter, sharpness_jitter})
    if (!(j >= 0.0 && j <= 1.0)) throw Error("jitter factors must lie in [0, 1]");
}

Raster crop_iris(const Raster& image, const IrisCircle& circle, const CropSpec& spec) {
  spec.validate();
  if (image.empty()) throw Error("crop_iris: empty image");
  if (!(circle.r > 0.0)) throw Error("crop_iris: iris radius must be > 0");
  if (circle.cx < 0.0 || circle.cy < 0.0 || circle.cx >= image.width || circle.cy >= image.height)
    throw Error("crop_iris: iris circle center lies outside the image");
  double side = spec.margin_factor * 2.0 * circle.r;
  return resample_window(image, circle.cx - side / 2.0, circle.cy - side / 2.0, side, side,
                         spec.target_side, spec.target_side);
}

Raster crop_iris(const Raster& image, const std::optional<IrisCircle>& circle, const CropSpec& spec) {
  if (!circle) {
    throw Error(
        "crop_iris: no iris circle annotation; provide iris_cx, iris_cy and iris_r in the "
        "manifest (automatic localization is not available)");
  }
  return crop_iris(image, *circle, spec);
}

Raster resize_bilinear(const Raster& image, int width, int height) {
  if (image.empty() || width <= 0 || height <= 0) throw Error("resize_bilinear: bad dimensions");
  if (image.width == width && image.height == height) return image;
  return resample_window(image, 0.0, 0.0, image.width, image.height, width, height);
}

Raster augment(const Raster& image, const AugmentPolicy& policy, Rng& rng) {
  g_augment_calls.fetch_add(1, std::memory_order_relaxed);
  double u_flip = rng.uniform();
  double angle = rng.uniform(-policy.rotation_range, policy.rotation_range);
  double brightness = rng.uniform(1.0 - policy.brightness_jitter, 1.0 + policy.brightness_jitter);
  double contrast = rng.uniform(1.0 - policy.contrast_jitter, 1.0 + policy.contrast_jitter);
  double sharpness = rng.uniform(1.0 - policy.sharpness_jitter, 1.0 + policy.sharpness_jitter);

  const int w = image.width;
  const int h = image.height;
  const int ch = image.channels;
  auto planes = to_planes(image);
  if (u_flip < policy.hflip_prob) hflip_planes(planes, w, h, ch);
  if (angle != 0.0) planes = rotate_planes(planes, w, h, ch, angle);
  if (brightness != 1.0) adjust_brightness(planes, brightness);
  if (contrast != 1.0) adjust_contrast(planes, w, h, ch, contrast);
  if (sharpness != 1.0) adjust_sharpness(planes, w, h, ch, sharpness);
  return from_planes(planes, w, h, ch);
}

std::uint64_t augmentation_seed(std::uint64_t global_seed, std::string_view sample_id,
                                std::uint64_t epoch, std::uint64_t occurrence) {
  std::string tag = "augment:";
  tag.append(sample_id);
  return derive_seed(global_seed, tag, epoch, occurrence);
}

std::uint64_t augment_call_count() { return g_augment_calls.load(std::memory_order_relaxed); }

}  // namespace pmi
