#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pmi/balance.hpp"
#include "pmi/model.hpp"
#include "pmi/preprocess.hpp"
#include "pmi/protocol.hpp"
#include "pmi/synth_provider.hpp"

namespace pmi {

// ---------------------------------------------------------------------------
// Data

/// One image of a training or test item.
struct ItemImage {
  Band band = Band::nir;
  std::string sample_id;                          // real image
  std::optional<SyntheticDescriptor> synthetic;  // generated image
};

/// A model input (one image per band) with its target.
struct Item {
  std::string id;
  std::vector<ItemImage> images;
  double pmi_hours = 0.0;
};

/// Manifest-backed item factory with a crop cache. Units are samples, or
/// multispectral pairs when `paired` is set. Not thread-safe.
class DataSource {
 public:
  DataSource(Manifest manifest, CropSpec crop, bool paired = false,
             double pair_tolerance = kDefaultPairTolerance, const SyntheticSource* provider = nullptr);

  const Manifest& manifest() const { return manifest_; }
  bool paired() const { return paired_; }
  const CropSpec& crop() const { return crop_; }
  const std::vector<SplitUnit>& units() const { return units_; }
  const std::vector<MultispectralPair>& pairs() const { return pairs_; }
  const std::vector<UnpairedRecord>& unpaired() const { return unpaired_; }
  std::vector<SplitUnit> units(std::span<const std::string> ids) const;

  Item item(const std::string& unit_id) const;
  Item item(const BalanceEntry& entry) const;

  /// Cropped, model-sized image (cached).
  const Raster& image(const ItemImage& image);

 private:
  Manifest manifest_;
  CropSpec crop_;
  bool paired_;
  const SyntheticSource* provider_;
  std::vector<SplitUnit> units_;
  std::vector<MultispectralPair> pairs_;
  std::vector<UnpairedRecord> unpaired_;
  std::map<std::string, std::size_t> record_index_;
  std::map<std::string, std::size_t> pair_index_;
  std::map<std::string, Raster> cache_;
};

/// Records of one band only.
Manifest filter_band(const Manifest& manifest, Band band);

// ---------------------------------------------------------------------------
// Training

enum class LossKind { mse, mae };
std::string_view loss_name(LossKind loss);
LossKind parse_loss(std::string_view text);

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-6;
  int batch_size = 32;
  int epochs = 500;
  LossKind loss = LossKind::mse;
  std::uint64_t seed = 0;
  /// Regress z-scored targets and map predictions back to hours.
  bool normalize_targets = false;
  bool augment = true;
  AugmentPolicy augmentation{};
  /// Validation metrics every this many epochs (0: never).
  int validate_every = 0;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct TrainHistory {
  std::vector<double> train_loss;  // mean per-item loss in model target units
  std::vector<double> epoch_seconds;
  std::vector<std::optional<double>> val_rmse;  // hours
  std::vector<std::optional<double>> val_mae;
  std::uint64_t optimizer_steps = 0;

  std::size_t epochs_completed() const { return train_loss.size(); }
  std::string to_json() const;
};

struct Prediction {
  std::string id;
  double y_pred = 0.0;  // hours
  double y_true = 0.0;
};

/// Items the training loop sees for a fold: the plan's entries (real
/// references with their multiplicity plus synthetic inserts), or every
/// training unit once. Throws when the plan was built from other units.
std::vector<Item> training_items(const DataSource& data, std::span<const std::string> train_ids,
                                 const BalancingPlan* plan);

/// Adam on the configured loss over seeded per-epoch shuffles.
TrainHistory train(RegressionModel& model, DataSource& data, std::span<const std::string> train_ids,
                   const BalancingPlan* plan, const TrainConfig& config,
                   std::span<const std::string> validation_ids = {});

/// Same, over explicit items.
TrainHistory train_items(RegressionModel& model, DataSource& data, std::span<const Item> items,
                         const TrainConfig& config, std::span<const Item> validation = {});

/// Crop-only inference; throws on a non-finite prediction.
std::vector<Prediction> predict(RegressionModel& model, DataSource& data, std::span<const std::string> ids,
                                int batch_size = 32);
std::vector<Prediction> predict_items(RegressionModel& model, DataSource& data, std::span<const Item> items,
                                      int batch_size = 32);

/// id,y_true_hours,y_pred_hours with 6 decimals.
void write_predictions(const std::vector<Prediction>& predictions, const std::filesystem::path& path);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

/// "{scenario}_{band}_{backbone}_{fold}.ckpt", e.g. "S2_NIR_toy_cnn_0.ckpt".
std::string checkpoint_name(Scenario scenario, std::string_view band_mode, BackboneName backbone, int fold);

}  // namespace pmi
