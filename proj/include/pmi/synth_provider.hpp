#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pmi/image.hpp"
#include "pmi/manifest.hpp"

namespace pmi {

/// One pre-generated (or procedurally generated) synthetic iris image.
struct SyntheticDescriptor {
  std::string synthetic_id;
  Band band = Band::nir;
  int pmi_class = 1;
  std::filesystem::path image_path;  // "stub://<band>/<class>/<seed>" for procedural images

  bool operator==(const SyntheticDescriptor&) const = default;
};

/// Supplies synthetic images by (band, PMI class). Implementations are
/// read-only after construction and safe for concurrent use.
class SyntheticSource {
 public:
  virtual ~SyntheticSource() = default;
  virtual bool serves(Band band, int pmi_class) const = 0;
  /// Seeded sampling without replacement while the bucket lasts, then with
  /// replacement. Throws when the bucket is empty.
  virtual std::vector<SyntheticDescriptor> draw(Band band, int pmi_class, std::size_t n,
                                                std::uint64_t seed) const = 0;
  /// Square, iris-centred image; the iris spans the frame with the default crop margin.
  virtual Raster load(const SyntheticDescriptor& descriptor) const = 0;
};

/// Directory of images indexed by a sidecar CSV
/// (synthetic_id,band,pmi_class,image_path; paths relative to the directory).
class SyntheticInventory final : public SyntheticSource {
 public:
  static constexpr const char* kSidecarName = "inventory.csv";

  SyntheticInventory() = default;

  const std::filesystem::path& root() const { return root_; }
  std::size_t size() const;
  const std::vector<SyntheticDescriptor>& bucket(Band band, int pmi_class) const;

  bool serves(Band band, int pmi_class) const override;
  std::vector<SyntheticDescriptor> draw(Band band, int pmi_class, std::size_t n,
                                        std::uint64_t seed) const override;
  Raster load(const SyntheticDescriptor& descriptor) const override;

 private:
  friend SyntheticInventory load_inventory(const std::filesystem::path& root);
  std::filesystem::path root_;
  std::map<std::pair<Band, int>, std::vector<SyntheticDescriptor>> index_;
};

/// root is the inventory directory (or the sidecar file itself). Throws on a
/// malformed sidecar and lists every indexed file that does not exist.
SyntheticInventory load_inventory(const std::filesystem::path& root);

std::vector<SyntheticDescriptor> draw(const SyntheticInventory& inventory, Band band, int pmi_class,
                                      std::size_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Procedural stand-in for generator output.

inline constexpr int kStubSide = 256;

/// Degradation level in [0, 1] rising with PMI on a log scale.
double stub_degradation_for_pmi(double pmi_hours);
/// Degradation at the class's representative PMI (range midpoint).
double stub_degradation_for_class(int class_index);

/// Renders a concentric iris-like texture (dark pupil, fibrous iris annulus,
/// bright sclera), then blurs it and collapses its contrast by `degradation`.
/// The texture depends on texture_seed, the sensor noise on noise_seed.
Raster render_stub_iris(Band band, double degradation, std::uint64_t texture_seed,
                        std::uint64_t noise_seed, int side = kStubSide);

/// Iris circle of a rendered stub image.
IrisCircle stub_iris_circle(int side = kStubSide);

struct StubImage {
  Raster image;
  SyntheticDescriptor descriptor;
};

StubImage stub_generate(Band band, int class_index, std::uint64_t seed);

/// Mean gradient magnitude over the iris disk (luminance for RGB).
double radial_edge_contrast(const Raster& image);

/// SyntheticSource with an unbounded inventory of stub_generate images.
class StubSynthesizer final : public SyntheticSource {
 public:
  bool serves(Band band, int pmi_class) const override;
  std::vector<SyntheticDescriptor> draw(Band band, int pmi_class, std::size_t n,
                                        std::uint64_t seed) const override;
  Raster load(const SyntheticDescriptor& descriptor) const override;
};

/// Materializes stub images as an on-disk inventory.
SyntheticInventory write_stub_inventory(const std::filesystem::path& root, std::span<const Band> bands,
                                        int per_class, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Procedural "real" corpora for desk-scale experiments.

struct StubSampleSpec {
  std::string dataset_id;
  std::string subject_id;
  Eye eye = Eye::left;
  std::string session_id;
  Band band = Band::nir;
  double pmi_hours = 0.0;
};

struct StubCorpusOptions {
  std::vector<std::string> datasets{"warsaw", "nij"};
  int subjects_per_dataset = 9;
  int sessions_per_subject = 6;
  std::vector<Band> bands{Band::nir, Band::rgb};
  std::uint64_t seed = 0;
};

/// Subject s, session j lands in PMI class 1 + (s * sessions + j) mod 18, so
/// each subject is followed through consecutive classes; the PMI is drawn
/// uniformly inside the class.
std::vector<StubSampleSpec> stub_corpus_layout(const StubCorpusOptions& options);

/// Renders every spec to dir/images, writes dir/manifest.csv and returns the
/// loaded manifest. Texture follows the subject/eye, noise the sample.
Manifest write_stub_corpus(const std::filesystem::path& dir, std::span<const StubSampleSpec> specs,
                           std::uint64_t seed);

}  // namespace pmi
