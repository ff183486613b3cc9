#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pmi/stats.hpp"
#include "pmi/trainer.hpp"

namespace pmi {

/// sqrt(mean((pred - target)^2)). Throws on empty, unequal or non-finite input.
double rmse(std::span<const double> preds, std::span<const double> targets);
/// mean(|pred - target|), same preconditions.
double mae(std::span<const double> preds, std::span<const double> targets);

struct FoldMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  std::size_t n = 0;

  bool operator==(const FoldMetrics&) const = default;
};

FoldMetrics fold_metrics(std::span<const Prediction> predictions);

struct MeanStd {
  double mean = 0.0;
  double stdev = 0.0;  // sample (n - 1) convention; 0 for a single fold
};

struct CrossFoldSummary {
  MeanStd rmse;
  MeanStd mae;
};

CrossFoldSummary cross_fold_summary(std::span<const FoldMetrics> folds);

struct MetricsReport {
  std::string scenario;
  std::string band;
  std::string backbone;
  std::string balancing;
  std::vector<FoldMetrics> folds;
  CrossFoldSummary summary;

  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
};

/// Fills summary from folds.
MetricsReport make_metrics_report(std::string scenario, std::string band, std::string backbone,
                                  std::string balancing, std::vector<FoldMetrics> folds);
void save_metrics_report(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport load_metrics_report(const std::filesystem::path& path);

/// Files written for one plot: `<stem>.png`, `<stem>.svg` and `<stem>.json`.
struct PlotFiles {
  std::filesystem::path png;
  std::filesystem::path svg;
  std::filesystem::path sidecar;
};

PlotFiles plot_files(const std::filesystem::path& stem);

/// Predicted against true PMI with the identity line. The sidecar lists every
/// (id, y_true, y_pred) point.
PlotFiles scatter_report(std::span<const Prediction> predictions, const std::filesystem::path& stem,
                         const std::string& title = "Predicted vs. actual PMI");

struct BoxGroup {
  std::string name;
  std::vector<double> values;
};

/// One box per group; the sidecar holds min, Q1, median, Q3, max and count.
PlotFiles distribution_boxplot(std::span<const BoxGroup> groups, const std::filesystem::path& stem,
                               const std::string& title = "PMI distribution");

}  // namespace pmi
