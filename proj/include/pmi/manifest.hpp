#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pmi/common.hpp"
#include "pmi/stats.hpp"

namespace pmi {

enum class Eye { left, right };

struct IrisCircle {
  double cx = 0.0;
  double cy = 0.0;
  double r = 0.0;

  bool operator==(const IrisCircle&) const = default;
};

/// One iris image and its acquisition metadata.
struct SampleRecord {
  std::string sample_id;
  std::string dataset_id;
  std::string subject_id;
  Eye eye = Eye::left;
  std::string session_id;
  Band band = Band::nir;
  double pmi_hours = 0.0;
  std::filesystem::path image_path;
  std::optional<IrisCircle> iris_circle;
  bool is_synthetic = false;
  /// Columns outside the fixed schema (gender, age, ...), in file order.
  std::vector<std::pair<std::string, std::string>> extra;

  bool operator==(const SampleRecord&) const = default;
};

struct Manifest {
  std::vector<SampleRecord> records;
  std::filesystem::path source_path;
};

/// Raised for malformed manifests. row is the 1-based data row (0 when the
/// problem is not tied to one row).
class ManifestError : public Error {
 public:
  ManifestError(const std::string& message, std::size_t row = 0, std::string column = {});
  std::size_t row() const { return row_; }
  const std::string& column() const { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

/// Loads a CSV manifest, or a JSON array manifest when the file name ends in
/// ".json". Records keep file order. Relative image paths are resolved against
/// the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path);

Manifest parse_manifest_csv(std::istream& in, const std::filesystem::path& source_path = {});
Manifest parse_manifest_json(std::istream& in, const std::filesystem::path& source_path = {});

/// Writes the CSV form. Image paths are written as stored.
void write_manifest_csv(const Manifest& manifest, std::ostream& out);
void write_manifest_json(const Manifest& manifest, std::ostream& out);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Absolute paths are returned as is; relative ones are taken against the
/// directory holding the manifest file.
std::filesystem::path resolve_image_path(const Manifest& manifest, const SampleRecord& record);

/// Checks every record and cross-record invariant; throws ManifestError.
void validate_manifest(const Manifest& manifest);

std::string_view eye_code(Eye eye);

struct MultispectralPair {
  SampleRecord nir;
  SampleRecord rgb;
  double pmi_hours = 0.0;  // taken from the NIR member

  /// "<nir id>+<rgb id>"; the atomic unit id for multispectral splits.
  std::string pair_id() const { return nir.sample_id + "+" + rgb.sample_id; }
};

struct UnpairedRecord {
  std::string sample_id;
  std::string reason;
};

struct PairingResult {
  std::vector<MultispectralPair> pairs;
  std::vector<UnpairedRecord> unpaired;
};

inline constexpr double kDefaultPairTolerance = 1.0;

/// Matches NIR and RGB records of the same subject, eye and session. Within a
/// group candidates are taken greedily by smallest PMI gap, ties broken by NIR
/// then RGB sample_id. Pairs are ordered by NIR sample_id.
PairingResult pair_multispectral(const Manifest& manifest,
                                 double pmi_tolerance = kDefaultPairTolerance);

struct GroupSummary {
  std::string dataset_id;
  Band band = Band::nir;
  stats::BoxStats pmi;
};

struct DatasetSummary {
  std::vector<GroupSummary> groups;  // sorted by dataset_id, then band
  std::vector<std::string> dataset_ids() const;
};

DatasetSummary summarize(const Manifest& manifest);

}  // namespace pmi
