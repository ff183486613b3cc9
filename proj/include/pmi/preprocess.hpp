#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "pmi/image.hpp"
#include "pmi/manifest.hpp"
#include "pmi/random.hpp"

namespace pmi {

/// Square model input cut around the iris outer boundary.
struct CropSpec {
  int target_side = 224;       // 224, or 299 for inception_v3
  double margin_factor = 1.1;  // window side = margin_factor * 2r

  /// Throws pmi::Error unless target_side is 224 or 299 and margin_factor >= 1.
  void validate() const;
};

/// Training-time photometric and geometric jitter.
struct AugmentPolicy {
  double hflip_prob = 0.5;
  double rotation_range = 30.0;  // degrees, symmetric
  double brightness_jitter = 0.2;
  double contrast_jitter = 0.2;
  double sharpness_jitter = 0.2;
  std::uint64_t seed = 0;

  static AugmentPolicy identity() { return {0.0, 0.0, 0.0, 0.0, 0.0, 0}; }
  void validate() const;
};

/// Cuts the window centred on the circle, resamples it bilinearly to
/// target_side, and replicates edge pixels wherever the window leaves the
/// image. Channel count is preserved.
Raster crop_iris(const Raster& image, const IrisCircle& circle, const CropSpec& spec);

/// Same, for a record whose annotation may be missing; throws when it is.
Raster crop_iris(const Raster& image, const std::optional<IrisCircle>& circle, const CropSpec& spec);

/// Locates the iris outer boundary. No implementation ships; crops rely on
/// manifest annotations.
class IrisDetector {
 public:
  virtual ~IrisDetector() = default;
  virtual std::optional<IrisCircle> detect(const Raster& image) const = 0;
};

/// Bilinear resample (pixel-centre aligned, edge clamped).
Raster resize_bilinear(const Raster& image, int width, int height);

/// Horizontal flip, rotation about the centre (edge replicated), then
/// brightness, contrast and sharpness factors. Exactly five values are drawn
/// from rng per call, in that order.
Raster augment(const Raster& image, const AugmentPolicy& policy, Rng& rng);

/// Per-sample augmentation stream: independent of worker scheduling.
std::uint64_t augmentation_seed(std::uint64_t global_seed, std::string_view sample_id,
                                std::uint64_t epoch, std::uint64_t occurrence = 0);

/// Number of augment() calls made by this process.
std::uint64_t augment_call_count();

}  // namespace pmi
