#include "pmi/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace pmi {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string lower(std::string_view text) {
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<Band> experiment_bands(const RunConfig& c) {
  switch (c.band) {
    case BandMode::nir:
      return {Band::nir};
    case BandMode::rgb:
      return {Band::rgb};
    case BandMode::multispectral:
      return {Band::nir, Band::rgb};
  }
  return {};
}

}  // namespace

std::string_view band_mode_name(BandMode mode) {
  switch (mode) {
    case BandMode::nir:
      return "NIR";
    case BandMode::rgb:
      return "RGB";
    case BandMode::multispectral:
      return "multispectral";
  }
  return "";
}

BandMode parse_band_mode(std::string_view text) {
  const auto s = lower(text);
  if (s == "nir") return BandMode::nir;
  if (s == "rgb") return BandMode::rgb;
  if (s == "multispectral" || s == "fusion" || s == "nir+rgb") return BandMode::multispectral;
  throw Error("unknown band mode '" + std::string(text) + "' (expected nir, rgb or multispectral)");
}

// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  if (manifest.empty()) throw Error("a manifest path is required");
  if (scenario == Scenario::s3_cross_dataset) {
    if (train_dataset.empty() || test_dataset.empty())
      throw Error("S3 needs both --train-dataset and --test-dataset");
    if (train_dataset == test_dataset) throw Error("S3 train and test datasets must differ");
  } else {
    if (k < 2) throw Error("k must be at least 2");
    if (balancing != BalancingStrategy::none)
      throw Error("balancing applies to the cross-dataset scenario (S3) only");
  }
  if (balancing == BalancingStrategy::synthetic_supplement && synthetic.empty())
    throw Error("synthetic balancing needs --synthetic (an inventory directory or 'stub')");
  if (!(class18_cap >= 409.0)) throw Error("class18_cap must be at least 409 hours");
  if (!(pair_tolerance >= 0.0)) throw Error("pair_tolerance must be non-negative");
  if (fusion_hidden <= 0) throw Error("fusion_hidden must be positive");
  if (backbone == BackboneName::ds_resnet152 && !weights)
    throw Error("ds_resnet152 needs --weights");
  if (band == BandMode::multispectral && backbone == BackboneName::ds_resnet152 && !rgb_weights)
    throw Error("multispectral ds_resnet152 needs --rgb-weights as well");
  CropSpec{nn::backbone_info(backbone).input_side, margin_factor}.validate();
  train.validate();
}

std::string RunConfig::to_json() const {
  json j;
  j["manifest"] = manifest.generic_string();
  j["scenario"] = scenario_name(scenario);
  j["band"] = band_mode_name(band);
  j["backbone"] = nn::backbone_info(backbone).id;
  j["balancing"] = strategy_name(balancing);
  j["k"] = k;
  j["seed"] = seed;
  j["out"] = out.generic_string();
  j["train_dataset"] = train_dataset;
  j["test_dataset"] = test_dataset;
  j["weights"] = weights ? json(weights->generic_string()) : json(nullptr);
  j["rgb_weights"] = rgb_weights ? json(rgb_weights->generic_string()) : json(nullptr);
  j["synthetic"] = synthetic;
  j["synthetic_target"] = synthetic_target ? json(*synthetic_target) : json(nullptr);
  j["class18_cap"] = class18_cap;
  j["pair_tolerance"] = pair_tolerance;
  j["margin_factor"] = margin_factor;
  j["fusion_hidden"] = fusion_hidden;
  j["train"] = json::parse(train.to_json());
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
  RunConfig c;
  try {
    auto j = json::parse(text);
    c.manifest = j.at("manifest").get<std::string>();
    c.scenario = parse_scenario(j.at("scenario").get<std::string>());
    c.band = parse_band_mode(j.at("band").get<std::string>());
    c.backbone = nn::parse_backbone(j.at("backbone").get<std::string>());
    c.balancing = parse_strategy(j.at("balancing").get<std::string>());
    c.k = j.value("k", c.k);
    c.seed = j.value("seed", c.seed);
    c.out = j.value("out", std::string("run"));
    c.train_dataset = j.value("train_dataset", std::string());
    c.test_dataset = j.value("test_dataset", std::string());
    if (j.contains("weights") && !j["weights"].is_null()) c.weights = j["weights"].get<std::string>();
    if (j.contains("rgb_weights") && !j["rgb_weights"].is_null()) c.rgb_weights = j["rgb_weights"].get<std::string>();
    c.synthetic = j.value("synthetic", std::string());
    if (j.contains("synthetic_target") && !j["synthetic_target"].is_null())
      c.synthetic_target = j["synthetic_target"].get<std::size_t>();
    c.class18_cap = j.value("class18_cap", c.class18_cap);
    c.pair_tolerance = j.value("pair_tolerance", c.pair_tolerance);
    c.margin_factor = j.value("margin_factor", c.margin_factor);
    c.fusion_hidden = j.value("fusion_hidden", c.fusion_hidden);
    if (j.contains("train")) c.train = TrainConfig::from_json(j["train"].dump());
  } catch (const json::exception& e) {
    throw Error(std::string("malformed run config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------

std::unique_ptr<DataSource> prepare_data(const RunConfig& config, const SyntheticSource* provider) {
  Manifest manifest = load_manifest(config.manifest);
  const CropSpec crop{nn::backbone_info(config.backbone).input_side, config.margin_factor};
  if (config.band == BandMode::multispectral) {
    auto data = std::make_unique<DataSource>(std::move(manifest), crop, true, config.pair_tolerance, provider);
    if (data->units().empty()) throw Error("the manifest has no NIR/RGB pairs for a multispectral experiment");
    return data;
  }
  const Band band = config.band == BandMode::nir ? Band::nir : Band::rgb;
  Manifest filtered = filter_band(manifest, band);
  if (filtered.records.empty())
    throw Error("the manifest has no " + std::string(band_name(band)) + " records");
  return std::make_unique<DataSource>(std::move(filtered), crop, false, config.pair_tolerance, provider);
}

std::unique_ptr<SyntheticSource> make_provider(const RunConfig& config) {
  if (config.synthetic.empty()) return nullptr;
  if (config.synthetic == "stub") return std::make_unique<StubSynthesizer>();
  return std::make_unique<SyntheticInventory>(load_inventory(config.synthetic));
}

SplitPlan make_split(const RunConfig& config, const DataSource& data) {
  const auto& units = data.units();
  SplitPlan plan;
  switch (config.scenario) {
    case Scenario::s1_sample_disjoint:
      plan = make_sample_disjoint_folds(units, config.k, config.seed);
      break;
    case Scenario::s2_subject_disjoint:
      plan = make_subject_disjoint_folds(units, config.k, config.seed);
      break;
    case Scenario::s3_cross_dataset:
      plan = make_cross_dataset_split(units, config.train_dataset, config.test_dataset);
      plan.seed = config.seed;
      break;
  }
  if (data.paired()) plan.unit_kind = "pair";
  return plan;
}

std::vector<BalancingPlan> make_balancing(const RunConfig& config, const DataSource& data, const SplitPlan& split,
                                          const SyntheticSource* provider) {
  std::vector<BalancingPlan> plans;
  if (config.balancing == BalancingStrategy::none) return plans;
  for (std::size_t f = 0; f < split.folds.size(); ++f) {
    const auto units = data.units(split.folds[f].train_ids);
    const auto seed = derive_seed(config.seed, "balance", f);
    if (config.balancing == BalancingStrategy::real_upsample) {
      plans.push_back(plan_real_upsampling(units, seed));
    } else {
      if (!provider) throw Error("synthetic balancing needs a synthetic image provider");
      SupplementOptions opts;
      opts.bands = experiment_bands(config);
      opts.target_count = config.synthetic_target;
      opts.class18_cap = config.class18_cap;
      plans.push_back(plan_synthetic_supplement(units, *provider, seed, opts));
    }
  }
  return plans;
}

std::unique_ptr<RegressionModel> build_model(const RunConfig& config, std::uint64_t init_seed) {
  if (config.band == BandMode::multispectral)
    return std::make_unique<MultispectralModel>(config.backbone, init_seed, config.fusion_hidden, config.weights,
                                                config.rgb_weights);
  const Band band = config.band == BandMode::nir ? Band::nir : Band::rgb;
  return build_narrowband_model({config.backbone, band, config.weights}, init_seed);
}

FoldResult run_fold(const RunConfig& config, DataSource& data, const SplitPlan& split, std::size_t fold,
                    const BalancingPlan* plan, RegressionModel& model) {
  const Fold& f = split.folds.at(fold);
  TrainConfig tc = config.train;
  tc.seed = derive_seed(config.seed, "train", fold);
  FoldResult r;
  r.history = train(model, data, f.train_ids, plan, tc, f.test_ids);
  r.predictions = predict(model, data, f.test_ids, tc.batch_size);
  r.metrics = fold_metrics(r.predictions);

  double mean = 0.0;
  for (const auto& u : data.units(f.train_ids)) mean += u.pmi_hours;
  mean /= static_cast<double>(f.train_ids.size());
  std::vector<Prediction> constant = r.predictions;
  for (auto& p : constant) p.y_pred = mean;
  r.baseline = fold_metrics(constant);
  return r;
}

MetricsReport metrics_report(const RunConfig& config, const std::vector<FoldMetrics>& folds) {
  return make_metrics_report(std::string(scenario_name(config.scenario)), std::string(band_mode_name(config.band)),
                             std::string(nn::backbone_info(config.backbone).id),
                             std::string(strategy_name(config.balancing)), folds);
}

ExperimentResult run_experiment(const RunConfig& config, const SyntheticSource* provider, bool write_artifacts,
                                const ProgressFn& progress) {
  config.validate();
  std::unique_ptr<SyntheticSource> owned;
  if (!provider && !config.synthetic.empty()) {
    owned = make_provider(config);
    provider = owned.get();
  }
  auto data = prepare_data(config, provider);
  ExperimentResult result;
  result.split = make_split(config, *data);
  if (!verify_split(result.split, data->units()).passed()) throw Error("generated split failed its own audit");
  result.balancing = make_balancing(config, *data, result.split, provider);

  if (write_artifacts) {
    fs::create_directories(config.out);
    write_text(config.out / "run_config.json", config.to_json());
    save_split_plan(result.split, split_path(config));
    for (std::size_t f = 0; f < result.balancing.size(); ++f)
      save_balancing_plan(result.balancing[f], balancing_path(config, f));
  }

  std::vector<FoldMetrics> metrics, baseline;
  for (std::size_t f = 0; f < result.split.folds.size(); ++f) {
    auto model = build_model(config, derive_seed(config.seed, "model", f));
    const BalancingPlan* plan = result.balancing.empty() ? nullptr : &result.balancing[f];
    FoldResult fr = run_fold(config, *data, result.split, f, plan, *model);
    if (progress) {
      std::ostringstream msg;
      msg << "fold " << f << ": rmse " << fr.metrics.rmse << " mae " << fr.metrics.mae << " (baseline mae "
          << fr.baseline.mae << ", final train loss " << fr.history.train_loss.back() << ")";
      progress(msg.str());
    }
    if (write_artifacts) {
      fs::create_directories(checkpoint_path(config, f).parent_path());
      fs::create_directories(predictions_path(config, f).parent_path());
      save_checkpoint(*model, checkpoint_path(config, f), config.to_json());
      write_text(history_path(config, f), fr.history.to_json() + "\n");
      write_predictions(fr.predictions, predictions_path(config, f));
    }
    metrics.push_back(fr.metrics);
    baseline.push_back(fr.baseline);
    result.folds.push_back(std::move(fr));
  }
  result.report = metrics_report(config, metrics);
  result.baseline_report = metrics_report(config, baseline);
  result.baseline_report.backbone = "constant_mean";
  if (write_artifacts) save_metrics_report(result.report, metrics_path(config));
  return result;
}

// ---------------------------------------------------------------------------

fs::path split_path(const RunConfig& c) { return c.out / "split.json"; }

fs::path balancing_path(const RunConfig& c, std::size_t fold) {
  return c.out / ("balancing_fold" + std::to_string(fold) + ".json");
}

fs::path checkpoint_path(const RunConfig& c, std::size_t fold) {
  return c.out / "checkpoints" /
         checkpoint_name(c.scenario, band_mode_name(c.band), c.backbone, static_cast<int>(fold));
}

fs::path history_path(const RunConfig& c, std::size_t fold) {
  return c.out / "checkpoints" / ("history_fold" + std::to_string(fold) + ".json");
}

fs::path predictions_path(const RunConfig& c, std::size_t fold) {
  return c.out / "predictions" / ("fold" + std::to_string(fold) + ".csv");
}

fs::path metrics_path(const RunConfig& c) { return c.out / "metrics.json"; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace pmi
