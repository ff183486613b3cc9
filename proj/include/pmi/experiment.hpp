#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pmi/balance.hpp"
#include "pmi/evaluate.hpp"
#include "pmi/model.hpp"
#include "pmi/protocol.hpp"
#include "pmi/trainer.hpp"

namespace pmi {

enum class BandMode { nir, rgb, multispectral };

/// "NIR", "RGB" or "multispectral".
std::string_view band_mode_name(BandMode mode);
BandMode parse_band_mode(std::string_view text);

/// Everything that defines one experiment.
struct RunConfig {
  std::filesystem::path manifest;
  Scenario scenario = Scenario::s2_subject_disjoint;
  BandMode band = BandMode::nir;
  BackboneName backbone = BackboneName::toy_cnn;
  BalancingStrategy balancing = BalancingStrategy::none;
  int k = 10;
  std::uint64_t seed = 0;
  std::filesystem::path out = "run";
  std::string train_dataset;  // S3
  std::string test_dataset;   // S3
  std::optional<std::filesystem::path> weights;      // NIR (or only) backbone
  std::optional<std::filesystem::path> rgb_weights;  // RGB backbone of a fusion model
  /// Synthetic inventory directory, or "stub" for procedural images.
  std::string synthetic;
  std::optional<std::size_t> synthetic_target;
  double class18_cap = kDefaultClass18Cap;
  double pair_tolerance = kDefaultPairTolerance;
  double margin_factor = 1.1;
  int fusion_hidden = kDefaultFusionHidden;
  TrainConfig train;

  /// Throws on an inconsistent combination.
  void validate() const;
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
};

/// Loads the manifest and builds the data source the band mode calls for.
std::unique_ptr<DataSource> prepare_data(const RunConfig& config, const SyntheticSource* provider = nullptr);

/// Provider named by config.synthetic (null when none is configured).
std::unique_ptr<SyntheticSource> make_provider(const RunConfig& config);

SplitPlan make_split(const RunConfig& config, const DataSource& data);

/// One plan per fold; empty when balancing is none.
std::vector<BalancingPlan> make_balancing(const RunConfig& config, const DataSource& data, const SplitPlan& split,
                                          const SyntheticSource* provider);

std::unique_ptr<RegressionModel> build_model(const RunConfig& config, std::uint64_t init_seed);

struct FoldResult {
  TrainHistory history;
  std::vector<Prediction> predictions;
  FoldMetrics metrics;
  /// Mean-of-training-targets predictor on the same test items.
  FoldMetrics baseline;
};

struct ExperimentResult {
  SplitPlan split;
  std::vector<BalancingPlan> balancing;
  std::vector<FoldResult> folds;
  MetricsReport report;
  MetricsReport baseline_report;
};

/// Trains and tests one fold; the model is left trained.
FoldResult run_fold(const RunConfig& config, DataSource& data, const SplitPlan& split, std::size_t fold,
                    const BalancingPlan* plan, RegressionModel& model);

using ProgressFn = std::function<void(const std::string&)>;

/// Split, balance, train and test every fold in memory. When write_artifacts
/// is set, everything a CLI run produces is written under config.out.
ExperimentResult run_experiment(const RunConfig& config, const SyntheticSource* provider = nullptr,
                                bool write_artifacts = false, const ProgressFn& progress = {});

MetricsReport metrics_report(const RunConfig& config, const std::vector<FoldMetrics>& folds);

// Run-directory layout.
std::filesystem::path split_path(const RunConfig& config);
std::filesystem::path balancing_path(const RunConfig& config, std::size_t fold);
std::filesystem::path checkpoint_path(const RunConfig& config, std::size_t fold);
std::filesystem::path history_path(const RunConfig& config, std::size_t fold);
std::filesystem::path predictions_path(const RunConfig& config, std::size_t fold);
std::filesystem::path metrics_path(const RunConfig& config);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace pmi
