#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pmi/pmi_class.hpp"
#include "pmi/protocol.hpp"
#include "pmi/synth_provider.hpp"

namespace pmi {

enum class BalancingStrategy { none, real_upsample, synthetic_supplement };

/// "none", "real_upsample" or "synthetic_supplement".
std::string_view strategy_name(BalancingStrategy strategy);

/// Also accepts "real", "synthetic", "S3-real" and "S3-synthetic".
BalancingStrategy parse_strategy(std::string_view text);

enum class EntryKind { real_ref, synthetic_insert };

struct BalanceEntry {
  EntryKind kind = EntryKind::real_ref;
  /// Sample (or pair) id for real references; the synthetic ids joined by
  /// '+' for inserts.
  std::string id;
  /// One descriptor per band of the experiment (inserts only).
  std::vector<SyntheticDescriptor> synthetic;
  double assigned_pmi = 0.0;

  bool operator==(const BalanceEntry&) const = default;
};

struct BalancingPlan {
  BalancingStrategy strategy = BalancingStrategy::none;
  std::array<std::vector<BalanceEntry>, kPmiClassCount> classes;  // index c - 1
  std::size_t target_count = 0;
  std::uint64_t seed = 0;
  /// Fingerprint of the training units the plan was built from.
  std::string fingerprint;
  std::vector<Band> bands;
  double class18_cap = kDefaultClass18Cap;

  std::size_t total() const;
  std::array<std::size_t, kPmiClassCount> histogram() const;
};

/// Every training unit once, no inserts.
BalancingPlan plan_no_balancing(std::span<const SplitUnit> train_units, std::uint64_t seed);

/// Brings every non-empty class to the largest class count: each real unit
/// once, then uniform draws with replacement from the class's own units.
BalancingPlan plan_real_upsampling(std::span<const SplitUnit> train_units, std::uint64_t seed);

struct SupplementOptions {
  std::vector<Band> bands{Band::nir};
  /// Defaults to the largest real class count; must not be below it.
  std::optional<std::size_t> target_count;
  double class18_cap = kDefaultClass18Cap;
};

/// Tops every one of the 18 classes up to target_count with synthetic inserts
/// whose PMI is drawn uniformly inside the class. Real units appear once.
BalancingPlan plan_synthetic_supplement(std::span<const SplitUnit> train_units,
                                        const SyntheticSource& provider, std::uint64_t seed,
                                        const SupplementOptions& options = {});

std::string balancing_plan_to_json(const BalancingPlan& plan);
BalancingPlan balancing_plan_from_json(const std::string& text);
void save_balancing_plan(const BalancingPlan& plan, const std::filesystem::path& path);
BalancingPlan load_balancing_plan(const std::filesystem::path& path);

}  // namespace pmi
