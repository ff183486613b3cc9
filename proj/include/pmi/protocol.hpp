#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pmi/manifest.hpp"

namespace pmi {

enum class Scenario { s1_sample_disjoint, s2_subject_disjoint, s3_cross_dataset };

/// "S1_sample_disjoint", "S2_subject_disjoint" or "S3_cross_dataset".
std::string_view scenario_name(Scenario scenario);

/// Accepts the full names above and the short forms S1/S2/S3 (any case).
Scenario parse_scenario(std::string_view text);

/// The atomic item a split assigns: one sample, or one multispectral pair.
struct SplitUnit {
  std::string id;
  std::string subject_id;
  std::string dataset_id;
  double pmi_hours = 0.0;
};

std::vector<SplitUnit> units_from_manifest(const Manifest& manifest);
std::vector<SplitUnit> units_from_pairs(std::span<const MultispectralPair> pairs);

/// SHA-256 over the id-sorted "id|pmi" lines (pmi printed with 6 decimals).
std::string fingerprint_units(std::span<const SplitUnit> units);

struct Fold {
  std::vector<std::string> train_ids;  // sorted
  std::vector<std::string> test_ids;   // sorted
};

struct SplitPlan {
  Scenario scenario = Scenario::s1_sample_disjoint;
  std::uint64_t seed = 0;
  std::string fingerprint;
  std::string unit_kind = "sample";  // "sample" or "pair"
  std::string train_dataset;         // S3 only
  std::string test_dataset;          // S3 only
  std::vector<Fold> folds;
};

/// Shuffles units with the seeded RNG and deals them round-robin into k folds.
SplitPlan make_sample_disjoint_folds(std::span<const SplitUnit> units, int k, std::uint64_t seed);
SplitPlan make_sample_disjoint_folds(const Manifest& manifest, int k, std::uint64_t seed);

/// Shuffles subjects, then places them largest first into the fold with the
/// fewest test units so far (lowest index on ties).
SplitPlan make_subject_disjoint_folds(std::span<const SplitUnit> units, int k, std::uint64_t seed);
SplitPlan make_subject_disjoint_folds(const Manifest& manifest, int k, std::uint64_t seed);

SplitPlan make_cross_dataset_split(std::span<const SplitUnit> units, const std::string& train_dataset_id,
                                   const std::string& test_dataset_id);
SplitPlan make_cross_dataset_split(const Manifest& manifest, const std::string& train_dataset_id,
                                   const std::string& test_dataset_id);

struct AuditCheck {
  std::string name;
  bool passed = true;
  std::vector<std::string> counterexamples;  // offending ids (samples or subjects)
};

struct SplitAudit {
  std::vector<AuditCheck> checks;
  bool passed() const;
  const AuditCheck* find(std::string_view name) const;
};

/// Check names: "known_ids", "fold_disjoint", "fold_coverage", "test_partition",
/// "subject_disjoint", "single_fold", "dataset_disjoint". Throws when the
/// plan's fingerprint does not match the units.
SplitAudit verify_split(const SplitPlan& plan, std::span<const SplitUnit> units);
SplitAudit verify_split(const SplitPlan& plan, const Manifest& manifest);

std::string split_plan_to_json(const SplitPlan& plan);
SplitPlan split_plan_from_json(const std::string& text);
void save_split_plan(const SplitPlan& plan, const std::filesystem::path& path);
SplitPlan load_split_plan(const std::filesystem::path& path);

}  // namespace pmi
