#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pmi {

/// Base class of every error raised by the pipeline.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Band { nir, rgb };

/// "NIR" or "RGB".
std::string_view band_name(Band band);

/// Accepts NIR/RGB in any letter case.
Band parse_band(std::string_view text);

/// 1 for NIR, 3 for RGB.
inline int band_channels(Band band) { return band == Band::nir ? 1 : 3; }

}  // namespace pmi
