#include "pmi/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "pmi/csv.hpp"

namespace pmi {
namespace {

using json = nlohmann::ordered_json;
using nn::Tensor;

std::string lower(std::string_view text) {
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

/// Per-item loss and its derivative with respect to the prediction.
std::pair<double, double> loss_and_grad(LossKind kind, double y, double t) {
  const double d = y - t;
  if (kind == LossKind::mse) return {d * d, 2.0 * d};
  return {std::abs(d), d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)};
}

void check_bands(const RegressionModel& model, const Item& item) {
  const auto bands = model.bands();
  bool ok = bands.size() == item.images.size();
  for (std::size_t b = 0; ok && b < bands.size(); ++b) ok = bands[b] == item.images[b].band;
  if (!ok) {
    std::string have;
    for (const auto& im : item.images) have += (have.empty() ? "" : "+") + std::string(band_name(im.band));
    std::string want;
    for (Band b : bands) want += (want.empty() ? "" : "+") + std::string(band_name(b));
    throw Error("band mismatch: item " + item.id + " is " + have + " but the model takes " + want);
  }
}

std::vector<Tensor<float>> batch_inputs(RegressionModel& model, DataSource& data, std::span<const Item* const> items,
                                        const std::function<Raster(std::size_t, std::size_t, const Raster&)>& transform) {
  const auto bands = model.bands();
  std::vector<Tensor<float>> inputs;
  for (std::size_t b = 0; b < bands.size(); ++b) {
    std::vector<Raster> owned;
    std::vector<const Raster*> ptrs;
    owned.reserve(items.size());
    for (std::size_t k = 0; k < items.size(); ++k) {
      const Raster& base = data.image(items[k]->images[b]);
      if (transform) {
        owned.push_back(transform(k, b, base));
        ptrs.push_back(&owned.back());
      } else {
        ptrs.push_back(&base);
      }
    }
    inputs.push_back(make_input_batch(ptrs, bands[b], model.backbone()));
  }
  return inputs;
}

}  // namespace

// ---------------------------------------------------------------------------
// DataSource

Manifest filter_band(const Manifest& manifest, Band band) {
  Manifest out;
  out.source_path = manifest.source_path;
  for (const auto& r : manifest.records)
    if (r.band == band) out.records.push_back(r);
  return out;
}

DataSource::DataSource(Manifest manifest, CropSpec crop, bool paired, double pair_tolerance,
                       const SyntheticSource* provider)
    : manifest_(std::move(manifest)), crop_(crop), paired_(paired), provider_(provider) {
  crop_.validate();
  for (std::size_t i = 0; i < manifest_.records.size(); ++i) record_index_[manifest_.records[i].sample_id] = i;
  if (paired_) {
    auto result = pair_multispectral(manifest_, pair_tolerance);
    pairs_ = std::move(result.pairs);
    unpaired_ = std::move(result.unpaired);
    for (std::size_t i = 0; i < pairs_.size(); ++i) pair_index_[pairs_[i].pair_id()] = i;
    units_ = units_from_pairs(pairs_);
  } else {
    units_ = units_from_manifest(manifest_);
  }
}

std::vector<SplitUnit> DataSource::units(std::span<const std::string> ids) const {
  std::map<std::string_view, const SplitUnit*> by_id;
  for (const auto& u : units_) by_id[u.id] = &u;
  std::vector<SplitUnit> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error("unknown " + std::string(paired_ ? "pair" : "sample") + " id '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

Item DataSource::item(const std::string& unit_id) const {
  Item it;
  it.id = unit_id;
  if (paired_) {
    auto p = pair_index_.find(unit_id);
    if (p == pair_index_.end()) throw Error("unknown pair id '" + unit_id + "'");
    const auto& pair = pairs_[p->second];
    it.images = {{Band::nir, pair.nir.sample_id, std::nullopt}, {Band::rgb, pair.rgb.sample_id, std::nullopt}};
    it.pmi_hours = pair.pmi_hours;
  } else {
    auto r = record_index_.find(unit_id);
    if (r == record_index_.end()) throw Error("unknown sample id '" + unit_id + "'");
    const auto& rec = manifest_.records[r->second];
    it.images = {{rec.band, rec.sample_id, std::nullopt}};
    it.pmi_hours = rec.pmi_hours;
  }
  return it;
}

Item DataSource::item(const BalanceEntry& entry) const {
  if (entry.kind == EntryKind::real_ref) return item(entry.id);
  Item it;
  it.id = entry.id;
  it.pmi_hours = entry.assigned_pmi;
  for (const auto& d : entry.synthetic) it.images.push_back({d.band, {}, d});
  return it;
}

const Raster& DataSource::image(const ItemImage& image) {
  const std::string key = image.synthetic ? "synthetic:" + image.synthetic->synthetic_id : "real:" + image.sample_id;
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  Raster cropped;
  if (image.synthetic) {
    if (!provider_) throw Error("a synthetic item needs a synthetic image provider");
    Raster raw = provider_->load(*image.synthetic);
    if (raw.channels != band_channels(image.band))
      throw Error("synthetic image " + image.synthetic->synthetic_id + " has the wrong channel count");
    // Generator output is iris-centred with the iris filling the crop window.
    const double side = std::min(raw.width, raw.height);
    IrisCircle frame{(raw.width - 1) / 2.0, (raw.height - 1) / 2.0, side / (2.0 * crop_.margin_factor)};
    cropped = crop_iris(raw, frame, crop_);
  } else {
    auto r = record_index_.find(image.sample_id);
    if (r == record_index_.end()) throw Error("unknown sample id '" + image.sample_id + "'");
    const auto& rec = manifest_.records[r->second];
    Raster raw = read_image(resolve_image_path(manifest_, rec));
    if (raw.channels != band_channels(rec.band))
      throw Error("image of " + rec.sample_id + " has " + std::to_string(raw.channels) + " channels, band " +
                  std::string(band_name(rec.band)) + " needs " + std::to_string(band_channels(rec.band)));
    try {
      cropped = crop_iris(raw, rec.iris_circle, crop_);
    } catch (const Error& e) {
      throw Error("sample " + rec.sample_id + ": " + e.what());
    }
  }
  return cache_.emplace(key, std::move(cropped)).first->second;
}

// ---------------------------------------------------------------------------
// Config

std::string_view loss_name(LossKind loss) { return loss == LossKind::mse ? "mse" : "mae"; }

LossKind parse_loss(std::string_view text) {
  const auto s = lower(text);
  if (s == "mse") return LossKind::mse;
  if (s == "mae") return LossKind::mae;
  throw Error("unknown loss '" + std::string(text) + "' (expected mse or mae)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw Error("weight_decay must be non-negative");
  if (batch_size < 1) throw Error("batch_size must be at least 1");
  if (epochs < 1) throw Error("epochs must be at least 1");
  if (validate_every < 0) throw Error("validate_every must be non-negative");
  augmentation.validate();
}

std::string TrainConfig::to_json() const {
  json j;
  j["optimizer"] = "adam";
  j["learning_rate"] = learning_rate;
  j["weight_decay"] = weight_decay;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["loss"] = loss_name(loss);
  j["seed"] = seed;
  j["normalize_targets"] = normalize_targets;
  j["augment"] = augment;
  j["augmentation"] = {{"hflip_prob", augmentation.hflip_prob},
                       {"rotation_range", augmentation.rotation_range},
                       {"brightness_jitter", augmentation.brightness_jitter},
                       {"contrast_jitter", augmentation.contrast_jitter},
                       {"sharpness_jitter", augmentation.sharpness_jitter}};
  j["validate_every"] = validate_every;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    auto j = json::parse(text);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.loss = parse_loss(j.value("loss", std::string("mse")));
    c.seed = j.value("seed", c.seed);
    c.normalize_targets = j.value("normalize_targets", c.normalize_targets);
    c.augment = j.value("augment", c.augment);
    if (j.contains("augmentation")) {
      const auto& a = j["augmentation"];
      c.augmentation.hflip_prob = a.value("hflip_prob", c.augmentation.hflip_prob);
      c.augmentation.rotation_range = a.value("rotation_range", c.augmentation.rotation_range);
      c.augmentation.brightness_jitter = a.value("brightness_jitter", c.augmentation.brightness_jitter);
      c.augmentation.contrast_jitter = a.value("contrast_jitter", c.augmentation.contrast_jitter);
      c.augmentation.sharpness_jitter = a.value("sharpness_jitter", c.augmentation.sharpness_jitter);
    }
    c.validate_every = j.value("validate_every", c.validate_every);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainHistory::to_json() const {
  json j;
  j["epochs"] = epochs_completed();
  j["optimizer_steps"] = optimizer_steps;
  j["train_loss"] = train_loss;
  j["epoch_seconds"] = epoch_seconds;
  json vr = json::array(), vm = json::array();
  for (std::size_t i = 0; i < val_rmse.size(); ++i) {
    vr.push_back(val_rmse[i] ? json(*val_rmse[i]) : json(nullptr));
    vm.push_back(val_mae[i] ? json(*val_mae[i]) : json(nullptr));
  }
  j["val_rmse"] = std::move(vr);
  j["val_mae"] = std::move(vm);
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Training

std::vector<Item> training_items(const DataSource& data, std::span<const std::string> train_ids,
                                 const BalancingPlan* plan) {
  if (train_ids.empty()) throw Error("the training set is empty");
  std::vector<Item> items;
  if (!plan) {
    for (const auto& id : train_ids) items.push_back(data.item(id));
    return items;
  }
  const auto units = data.units(train_ids);
  if (fingerprint_units(units) != plan->fingerprint)
    throw Error("balancing plan fingerprint " + plan->fingerprint.substr(0, 12) +
                " does not match the training units; rebuild the plan for this fold");
  for (const auto& cls : plan->classes)
    for (const auto& e : cls) items.push_back(data.item(e));
  return items;
}

TrainHistory train(RegressionModel& model, DataSource& data, std::span<const std::string> train_ids,
                   const BalancingPlan* plan, const TrainConfig& config,
                   std::span<const std::string> validation_ids) {
  auto items = training_items(data, train_ids, plan);
  std::vector<Item> val;
  for (const auto& id : validation_ids) val.push_back(data.item(id));
  return train_items(model, data, items, config, val);
}

TrainHistory train_items(RegressionModel& model, DataSource& data, std::span<const Item> items,
                         const TrainConfig& config, std::span<const Item> validation) {
  config.validate();
  if (items.empty()) throw Error("the training set is empty");
  for (const auto& it : items) check_bands(model, it);
  for (const auto& it : validation) check_bands(model, it);

  if (config.normalize_targets) {
    double sum = 0.0;
    for (const auto& it : items) sum += it.pmi_hours;
    const double mean = sum / static_cast<double>(items.size());
    double sq = 0.0;
    for (const auto& it : items) sq += (it.pmi_hours - mean) * (it.pmi_hours - mean);
    const double sd = std::sqrt(sq / static_cast<double>(items.size()));
    model.scaler = {mean, sd > 0.0 ? sd : 1.0};
  } else {
    model.scaler = {};
  }

  nn::Adam<float> opt(model.parameters(), {config.learning_rate, config.weight_decay});
  model.reseed(derive_seed(config.seed, "dropout"));
  TrainHistory history;
  const std::size_t n = items.size();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    model.set_training(true);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng(derive_seed(config.seed, "epoch-order", static_cast<std::uint64_t>(epoch))).shuffle(order.begin(), order.end());
    // Repeated ids (upsampled references) get distinct augmentation streams.
    std::map<std::string, std::uint64_t> seen;
    std::vector<std::uint64_t> occurrence(n);
    for (std::size_t idx : order) occurrence[idx] = seen[items[idx].id]++;

    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(n, begin + static_cast<std::size_t>(config.batch_size));
      std::vector<const Item*> batch;
      std::vector<std::uint64_t> occ;
      for (std::size_t k = begin; k < end; ++k) {
        batch.push_back(&items[order[k]]);
        occ.push_back(occurrence[order[k]]);
      }
      std::function<Raster(std::size_t, std::size_t, const Raster&)> transform;
      if (config.augment) {
        transform = [&](std::size_t k, std::size_t band, const Raster& img) {
          Rng rng(augmentation_seed(derive_seed(config.seed, "augment", band), batch[k]->id,
                                    static_cast<std::uint64_t>(epoch), occ[k]));
          return augment(img, config.augmentation, rng);
        };
      }
      auto inputs = batch_inputs(model, data, batch, transform);
      Tensor<float> y = model.forward(inputs);
      Tensor<float> grad(y.shape());
      const double m = static_cast<double>(batch.size());
      for (std::size_t k = 0; k < batch.size(); ++k) {
        const auto [l, g] = loss_and_grad(config.loss, y[k], model.scaler.to_model(batch[k]->pmi_hours));
        epoch_loss += l;
        grad[k] = static_cast<float>(g / m);
      }
      opt.zero_grad();
      model.backward(grad);
      opt.step();
    }
    history.train_loss.push_back(epoch_loss / static_cast<double>(n));
    history.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());

    std::optional<double> vr, vm;
    if (config.validate_every > 0 && !validation.empty() && (epoch + 1) % config.validate_every == 0) {
      auto preds = predict_items(model, data, validation, config.batch_size);
      double se = 0.0, ae = 0.0;
      for (const auto& p : preds) {
        se += (p.y_pred - p.y_true) * (p.y_pred - p.y_true);
        ae += std::abs(p.y_pred - p.y_true);
      }
      vr = std::sqrt(se / static_cast<double>(preds.size()));
      vm = ae / static_cast<double>(preds.size());
    }
    history.val_rmse.push_back(vr);
    history.val_mae.push_back(vm);
  }
  history.optimizer_steps = opt.steps();
  model.set_training(false);
  return history;
}

std::vector<Prediction> predict(RegressionModel& model, DataSource& data, std::span<const std::string> ids,
                                int batch_size) {
  std::vector<Item> items;
  for (const auto& id : ids) items.push_back(data.item(id));
  return predict_items(model, data, items, batch_size);
}

std::vector<Prediction> predict_items(RegressionModel& model, DataSource& data, std::span<const Item> items,
                                      int batch_size) {
  if (batch_size < 1) throw Error("batch_size must be at least 1");
  for (const auto& it : items) check_bands(model, it);
  model.set_training(false);
  std::vector<Prediction> out;
  out.reserve(items.size());
  for (std::size_t begin = 0; begin < items.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(items.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<const Item*> batch;
    for (std::size_t k = begin; k < end; ++k) batch.push_back(&items[k]);
    auto inputs = batch_inputs(model, data, batch, {});
    Tensor<float> y = model.forward(inputs);
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const double hours = model.scaler.to_hours(y[k]);
      if (!std::isfinite(hours)) throw Error("non-finite prediction for " + batch[k]->id);
      out.push_back({batch[k]->id, hours, batch[k]->pmi_hours});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_predictions(const std::vector<Prediction>& predictions, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write predictions '" + path.string() + "'");
  out << "id,y_true_hours,y_pred_hours\n";
  out << std::fixed << std::setprecision(6);
  for (const auto& p : predictions) {
    std::ostringstream t, y;
    t << std::fixed << std::setprecision(6) << p.y_true;
    y << std::fixed << std::setprecision(6) << p.y_pred;
    csv::write_row(out, {p.id, t.str(), y.str()});
  }
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read predictions '" + path.string() + "'");
  auto rows = csv::read(in);
  if (rows.empty() || rows[0].fields != std::vector<std::string>{"id", "y_true_hours", "y_pred_hours"})
    throw Error("'" + path.string() + "' lacks the id,y_true_hours,y_pred_hours header");
  std::vector<Prediction> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i].fields;
    if (f.size() != 3) throw Error("predictions row " + std::to_string(rows[i].line) + " needs 3 fields");
    try {
      out.push_back({f[0], std::stod(f[2]), std::stod(f[1])});
    } catch (const std::exception&) {
      throw Error("predictions row " + std::to_string(rows[i].line) + " has a non-numeric value");
    }
  }
  return out;
}

std::string checkpoint_name(Scenario scenario, std::string_view band_mode, BackboneName backbone, int fold) {
  const auto full = scenario_name(scenario);
  return std::string(full.substr(0, 2)) + "_" + std::string(band_mode) + "_" +
         std::string(nn::backbone_info(backbone).id) + "_" + std::to_string(fold) + ".ckpt";
}

}  // namespace pmi
