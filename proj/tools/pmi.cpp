// pmi: command-line driver for split / balance / train / evaluate / report.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pmi/balance.hpp"
#include "pmi/evaluate.hpp"
#include "pmi/experiment.hpp"
#include "pmi/manifest.hpp"
#include "pmi/model.hpp"
#include "pmi/protocol.hpp"
#include "pmi/synth_provider.hpp"
#include "pmi/trainer.hpp"

namespace fs = std::filesystem;
using namespace pmi;

namespace {

// Raw option values; only options that were given (on the command line or in
// the --config file) override the resolved configuration.
struct Options {
  std::string manifest, scenario, band, backbone, balancing, out = "run";
  std::string train_dataset, test_dataset, weights, rgb_weights, synthetic, loss;
  int k = 0, epochs = 0, batch_size = 0, fusion_hidden = 0, validate_every = 0, fold = -1;
  std::uint64_t seed = 0;
  std::size_t synthetic_target = 0;
  double lr = 0, weight_decay = 0, class18_cap = 0, pair_tolerance = 0, margin_factor = 0;
  bool normalize_targets = false, no_augment = false;

  std::map<std::string, CLI::Option*> given;

  bool has(const std::string& name) const {
    auto it = given.find(name);
    return it != given.end() && it->second->count() > 0;
  }
};

void add_run_options(CLI::App& app, Options& o) {
  auto add = [&](const std::string& name, auto& target, const std::string& help) {
    o.given[name] = app.add_option("--" + name, target, help);
  };
  add("manifest", o.manifest, "Manifest CSV or JSON");
  add("scenario", o.scenario, "S1, S2 or S3");
  add("band", o.band, "nir, rgb or multispectral");
  add("backbone", o.backbone, "vgg19, inception_v3, densenet121, resnet152, vit, ds_resnet152 or toy_cnn");
  add("balancing", o.balancing, "none, real_upsample or synthetic_supplement (S3 only)");
  o.given["k"] = app.add_option("-k,--folds", o.k, "Fold count for S1/S2");
  add("seed", o.seed, "Master seed");
  add("out", o.out, "Run directory (default: run)");
  add("train-dataset", o.train_dataset, "S3 training dataset_id");
  add("test-dataset", o.test_dataset, "S3 test dataset_id");
  add("weights", o.weights, "Pretrained weights for the (NIR) backbone");
  add("rgb-weights", o.rgb_weights, "Pretrained weights for the RGB backbone of a fusion model");
  add("synthetic", o.synthetic, "Synthetic inventory directory, or 'stub'");
  add("synthetic-target", o.synthetic_target, "Per-class count after synthetic balancing");
  add("class18-cap", o.class18_cap, "Upper PMI bound for class 18 draws");
  add("pair-tolerance", o.pair_tolerance, "Max NIR/RGB PMI gap for a pair (hours)");
  add("margin-factor", o.margin_factor, "Crop side as a multiple of the iris diameter");
  add("fusion-hidden", o.fusion_hidden, "Hidden width of the fusion head");
  add("epochs", o.epochs, "Training epochs");
  add("lr", o.lr, "Adam learning rate");
  add("weight-decay", o.weight_decay, "Adam L2 weight decay");
  add("batch-size", o.batch_size, "Mini-batch size");
  add("loss", o.loss, "mse or mae");
  add("validate-every", o.validate_every, "Test-set metrics every N epochs (0: never)");
  o.given["normalize-targets"] = app.add_flag("--normalize-targets", o.normalize_targets, "Regress z-scored targets");
  o.given["no-augment"] = app.add_flag("--no-augment", o.no_augment, "Disable training augmentation");
}

// defaults < saved <out>/run_config.json < --config file < flags
RunConfig resolve(const Options& o) {
  RunConfig c;
  const fs::path saved = fs::path(o.out) / "run_config.json";
  if (fs::exists(saved)) c = RunConfig::from_json(read_text(saved));
  c.out = o.out;
  if (o.has("manifest")) c.manifest = o.manifest;
  if (o.has("scenario")) c.scenario = parse_scenario(o.scenario);
  if (o.has("band")) c.band = parse_band_mode(o.band);
  if (o.has("backbone")) c.backbone = nn::parse_backbone(o.backbone);
  if (o.has("balancing")) c.balancing = parse_strategy(o.balancing);
  if (o.has("k")) c.k = o.k;
  if (o.has("seed")) c.seed = o.seed;
  if (o.has("train-dataset")) c.train_dataset = o.train_dataset;
  if (o.has("test-dataset")) c.test_dataset = o.test_dataset;
  if (o.has("weights")) c.weights = o.weights;
  if (o.has("rgb-weights")) c.rgb_weights = o.rgb_weights;
  if (o.has("synthetic")) c.synthetic = o.synthetic;
  if (o.has("synthetic-target")) c.synthetic_target = o.synthetic_target;
  if (o.has("class18-cap")) c.class18_cap = o.class18_cap;
  if (o.has("pair-tolerance")) c.pair_tolerance = o.pair_tolerance;
  if (o.has("margin-factor")) c.margin_factor = o.margin_factor;
  if (o.has("fusion-hidden")) c.fusion_hidden = o.fusion_hidden;
  if (o.has("epochs")) c.train.epochs = o.epochs;
  if (o.has("lr")) c.train.learning_rate = o.lr;
  if (o.has("weight-decay")) c.train.weight_decay = o.weight_decay;
  if (o.has("batch-size")) c.train.batch_size = o.batch_size;
  if (o.has("loss")) c.train.loss = parse_loss(o.loss);
  if (o.has("validate-every")) c.train.validate_every = o.validate_every;
  if (o.has("normalize-targets")) c.train.normalize_targets = o.normalize_targets;
  if (o.has("no-augment")) c.train.augment = !o.no_augment;
  c.validate();
  return c;
}

void persist(const RunConfig& c) {
  fs::create_directories(c.out);
  write_text(c.out / "run_config.json", c.to_json());
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// Loads the split and refuses it when the manifest changed underneath.
SplitPlan checked_split(const RunConfig& c, const DataSource& data) {
  const auto path = split_path(c);
  if (!fs::exists(path)) throw Error("no split plan at '" + path.string() + "'; run 'pmi split' first");
  SplitPlan plan = load_split_plan(path);
  if (plan.scenario != c.scenario)
    throw Error("split plan is " + std::string(scenario_name(plan.scenario)) + " but the run is configured for " +
                std::string(scenario_name(c.scenario)));
  auto audit = verify_split(plan, data.units());
  if (!audit.passed()) throw Error("split plan fails its audit; regenerate it");
  return plan;
}

std::vector<std::size_t> selected_folds(const SplitPlan& plan, int fold) {
  std::vector<std::size_t> folds;
  if (fold >= 0) {
    if (static_cast<std::size_t>(fold) >= plan.folds.size())
      throw Error("fold " + std::to_string(fold) + " out of range (plan has " + std::to_string(plan.folds.size()) + ")");
    folds.push_back(static_cast<std::size_t>(fold));
  } else {
    for (std::size_t f = 0; f < plan.folds.size(); ++f) folds.push_back(f);
  }
  return folds;
}

// ---------------------------------------------------------------------------

int cmd_validate(const Options& o) {
  if (o.manifest.empty()) throw Error("--manifest is required");
  Manifest m = load_manifest(o.manifest);
  validate_manifest(m);
  std::cout << o.manifest << ": " << m.records.size() << " records\n";
  for (const auto& g : summarize(m).groups)
    std::cout << "  " << g.dataset_id << " " << band_name(g.band) << ": n=" << g.pmi.count << " PMI min "
              << fixed(g.pmi.min, 1) << " / median " << fixed(g.pmi.median, 1) << " / max " << fixed(g.pmi.max, 1)
              << " h\n";
  auto pairing = pair_multispectral(m, o.has("pair-tolerance") ? o.pair_tolerance : kDefaultPairTolerance);
  std::cout << "  multispectral pairs: " << pairing.pairs.size() << " (" << pairing.unpaired.size()
            << " records unpaired)\n";
  return 0;
}

int cmd_split(const Options& o) {
  const RunConfig c = resolve(o);
  auto provider = make_provider(c);
  auto data = prepare_data(c, provider.get());
  const SplitPlan plan = make_split(c, *data);
  if (!verify_split(plan, data->units()).passed()) throw Error("generated split failed its audit");
  persist(c);
  save_split_plan(plan, split_path(c));
  std::cout << scenario_name(c.scenario) << ": " << plan.folds.size() << " fold(s) over " << data->units().size()
            << " " << plan.unit_kind << "s -> " << split_path(c).string() << "\n";
  return 0;
}

int cmd_balance(const Options& o) {
  const RunConfig c = resolve(o);
  auto provider = make_provider(c);
  auto data = prepare_data(c, provider.get());
  const SplitPlan split = checked_split(c, *data);
  std::vector<BalancingPlan> plans = make_balancing(c, *data, split, provider.get());
  if (plans.empty())
    for (std::size_t f = 0; f < split.folds.size(); ++f)
      plans.push_back(plan_no_balancing(data->units(split.folds[f].train_ids), derive_seed(c.seed, "balance", f)));
  persist(c);
  for (std::size_t f = 0; f < plans.size(); ++f) {
    save_balancing_plan(plans[f], balancing_path(c, f));
    const auto hist = plans[f].histogram();
    std::cout << "fold " << f << ": " << strategy_name(plans[f].strategy) << ", " << plans[f].total()
              << " training items, per-class";
    for (auto n : hist) std::cout << " " << n;
    std::cout << "\n";
  }
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig c = resolve(o);
  auto provider = make_provider(c);
  auto data = prepare_data(c, provider.get());
  const SplitPlan split = checked_split(c, *data);
  persist(c);
  for (std::size_t f : selected_folds(split, o.fold)) {
    std::optional<BalancingPlan> plan;
    if (fs::exists(balancing_path(c, f))) {
      plan = load_balancing_plan(balancing_path(c, f));
      if (plan->strategy != c.balancing)
        throw Error("balancing plan for fold " + std::to_string(f) + " is " + std::string(strategy_name(plan->strategy)) +
                    " but the run is configured for " + std::string(strategy_name(c.balancing)) + "; rerun 'pmi balance'");
    } else if (c.balancing != BalancingStrategy::none) {
      throw Error("no balancing plan for fold " + std::to_string(f) + "; run 'pmi balance' first");
    }
    auto model = build_model(c, derive_seed(c.seed, "model", f));
    TrainConfig tc = c.train;
    tc.seed = derive_seed(c.seed, "train", f);
    const auto& fold = split.folds[f];
    const auto history = train(*model, *data, fold.train_ids, plan ? &*plan : nullptr, tc,
                               tc.validate_every > 0 ? fold.test_ids : std::vector<std::string>{});
    fs::create_directories(checkpoint_path(c, f).parent_path());
    save_checkpoint(*model, checkpoint_path(c, f), c.to_json());
    write_text(history_path(c, f), history.to_json() + "\n");
    std::cout << "fold " << f << ": " << history.epochs_completed() << " epochs, " << history.optimizer_steps
              << " steps, final loss " << history.train_loss.back() << " -> " << checkpoint_path(c, f).string()
              << "\n";
  }
  return 0;
}

int cmd_evaluate(const Options& o) {
  const RunConfig c = resolve(o);
  auto provider = make_provider(c);
  auto data = prepare_data(c, provider.get());
  const SplitPlan split = checked_split(c, *data);
  std::vector<FoldMetrics> metrics;
  fs::create_directories(c.out / "predictions");
  fs::create_directories(c.out / "plots");
  std::vector<Prediction> all;
  for (std::size_t f = 0; f < split.folds.size(); ++f) {
    const auto ckpt = checkpoint_path(c, f);
    if (!fs::exists(ckpt)) throw Error("missing checkpoint '" + ckpt.string() + "'; run 'pmi train' first");
    auto model = build_model(c, 0);
    load_checkpoint(*model, ckpt);
    const auto& fold = split.folds[f];
    const auto preds = predict(*model, *data, fold.test_ids, c.train.batch_size);
    write_predictions(preds, predictions_path(c, f));
    const auto m = fold_metrics(preds);
    metrics.push_back(m);
    all.insert(all.end(), preds.begin(), preds.end());

    std::vector<BoxGroup> groups(2);
    groups[0].name = "train";
    groups[1].name = "test";
    for (const auto& u : data->units(fold.train_ids)) groups[0].values.push_back(u.pmi_hours);
    for (const auto& u : data->units(fold.test_ids)) groups[1].values.push_back(u.pmi_hours);
    const std::string suffix = "fold" + std::to_string(f);
    scatter_report(preds, c.out / "plots" / ("scatter_" + suffix), "Predicted vs. actual PMI, " + suffix);
    distribution_boxplot(groups, c.out / "plots" / ("distribution_" + suffix), "PMI distribution, " + suffix);
    std::cout << "fold " << f << ": RMSE " << fixed(m.rmse, 2) << " h, MAE " << fixed(m.mae, 2) << " h (n=" << m.n
              << ")\n";
  }
  scatter_report(all, c.out / "plots" / "scatter_all", "Predicted vs. actual PMI, all folds");
  const auto report = metrics_report(c, metrics);
  save_metrics_report(report, metrics_path(c));
  std::cout << "mean RMSE " << fixed(report.summary.rmse.mean, 2) << " +- " << fixed(report.summary.rmse.stdev, 2)
            << " h, mean MAE " << fixed(report.summary.mae.mean, 2) << " +- " << fixed(report.summary.mae.stdev, 2)
            << " h -> " << metrics_path(c).string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ReportInput {
  fs::path run_dir;  // empty for a bare metrics file
  MetricsReport report;
};

int cmd_report(const Options& o, const std::vector<std::string>& inputs) {
  if (inputs.empty()) throw Error("report needs at least one run directory or metrics.json");
  std::vector<ReportInput> runs;
  for (const auto& in : inputs) {
    fs::path p(in);
    ReportInput r;
    if (fs::is_directory(p)) {
      r.run_dir = p;
      p /= "metrics.json";
    }
    if (!fs::exists(p)) throw Error("no metrics report at '" + p.string() + "'; run 'pmi evaluate' first");
    r.report = load_metrics_report(p);
    runs.push_back(std::move(r));
  }

  // Tables are grouped by scenario, band and balancing; one row per backbone.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ReportInput*>> groups;
  for (const auto& r : runs) {
    const auto key = r.report.scenario + " | " + r.report.band + " | " + r.report.balancing;
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }

  const fs::path out(o.out);
  fs::create_directories(out / "plots");
  std::ostringstream md, csv;
  md << "# PMI estimation results\n";
  csv << "scenario,band,balancing,backbone,folds,rmse_mean,rmse_stdev,mae_mean,mae_stdev\n";
  for (const auto& key : order) {
    const auto& first = groups[key].front()->report;
    md << "\n## " << first.scenario << ", " << first.band << ", balancing: " << first.balancing << "\n\n";
    md << "| Backbone | RMSE Mean | RMSE StDev | MAE Mean | MAE StDev |\n";
    md << "|---|---:|---:|---:|---:|\n";
    for (const auto* r : groups[key]) {
      const auto& s = r->report.summary;
      md << "| " << r->report.backbone << " | " << fixed(s.rmse.mean, 2) << " | " << fixed(s.rmse.stdev, 2) << " | "
         << fixed(s.mae.mean, 2) << " | " << fixed(s.mae.stdev, 2) << " |\n";
      csv << r->report.scenario << "," << r->report.band << "," << r->report.balancing << "," << r->report.backbone
          << "," << r->report.folds.size() << "," << fixed(s.rmse.mean, 6) << "," << fixed(s.rmse.stdev, 6) << ","
          << fixed(s.mae.mean, 6) << "," << fixed(s.mae.stdev, 6) << "\n";
    }
  }

  // Per run: all-fold scatter and per-fold test PMI distribution.
  std::map<std::string, int> seen;
  for (const auto& r : runs) {
    if (r.run_dir.empty()) continue;
    std::string label = r.report.scenario + "_" + r.report.band + "_" + r.report.backbone + "_" + r.report.balancing;
    if (int n = seen[label]++; n > 0) label += "_" + std::to_string(n);
    std::vector<Prediction> all;
    std::vector<BoxGroup> folds;
    for (std::size_t f = 0; f < r.report.folds.size(); ++f) {
      const auto path = r.run_dir / "predictions" / ("fold" + std::to_string(f) + ".csv");
      if (!fs::exists(path)) continue;
      auto preds = read_predictions(path);
      BoxGroup g{"fold " + std::to_string(f), {}};
      for (const auto& p : preds) g.values.push_back(p.y_true);
      folds.push_back(std::move(g));
      all.insert(all.end(), preds.begin(), preds.end());
    }
    if (all.empty()) continue;
    scatter_report(all, out / "plots" / (label + "_scatter"), r.report.backbone + " " + r.report.band + " " + r.report.scenario);
    distribution_boxplot(folds, out / "plots" / (label + "_folds"), "Test PMI per fold, " + r.report.scenario);
    md << "\n![" << label << "](plots/" << label << "_scatter.png)\n";
  }

  write_text(out / "report.md", md.str());
  write_text(out / "report.csv", csv.str());
  std::cout << runs.size() << " run(s) -> " << (out / "report.md").string() << ", " << (out / "report.csv").string()
            << "\n";
  return 0;
}

struct SynthOptions {
  std::vector<std::string> bands{"nir", "rgb"};
  int per_class = 10;
  bool corpus = false;
  std::vector<std::string> datasets{"warsaw", "nij"};
  int subjects = 9;
  int sessions = 6;
};

int cmd_synth_stub(const Options& o, const SynthOptions& s) {
  std::vector<Band> bands;
  for (const auto& b : s.bands) bands.push_back(parse_band(b));
  const fs::path out(o.out);
  if (s.corpus) {
    StubCorpusOptions opts;
    opts.datasets = s.datasets;
    opts.subjects_per_dataset = s.subjects;
    opts.sessions_per_subject = s.sessions;
    opts.bands = bands;
    opts.seed = o.seed;
    const auto specs = stub_corpus_layout(opts);
    const auto manifest = write_stub_corpus(out, specs, o.seed);
    std::cout << manifest.records.size() << " stub samples -> " << (out / "manifest.csv").string() << "\n";
  } else {
    if (s.per_class < 1) throw Error("--per-class must be positive");
    const auto inventory = write_stub_inventory(out, bands, s.per_class, o.seed);
    std::cout << bands.size() * kPmiClassCount * static_cast<std::size_t>(s.per_class) << " synthetic stub images -> "
              << out.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-mortem interval estimation from iris images"};
  app.set_config("--config", "", "TOML/INI file with option defaults (flags win)");
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  add_run_options(app, o);

  auto* validate = app.add_subcommand("validate", "Check a manifest and summarize it");
  auto* split = app.add_subcommand("split", "Write the split plan");
  auto* balance = app.add_subcommand("balance", "Write per-fold balancing plans");
  auto* train_cmd = app.add_subcommand("train", "Train one model per fold");
  train_cmd->add_option("--fold", o.fold, "Train only this fold");
  auto* evaluate = app.add_subcommand("evaluate", "Predict test folds, write predictions, metrics and plots");
  auto* report = app.add_subcommand("report", "Comparison tables and plots from finished runs");
  std::vector<std::string> report_inputs;
  report->add_option("inputs", report_inputs, "Run directories or metrics.json files")->required();
  auto* synth = app.add_subcommand("synth-stub", "Write procedural stub images (synthetic inventory or a corpus)");
  SynthOptions so;
  synth->add_option("--bands", so.bands, "Bands to render")->delimiter(',');
  synth->add_option("--per-class", so.per_class, "Inventory images per band and class");
  synth->add_flag("--corpus", so.corpus, "Write a labelled corpus with a manifest instead of an inventory");
  synth->add_option("--datasets", so.datasets, "Corpus dataset ids")->delimiter(',');
  synth->add_option("--subjects", so.subjects, "Corpus subjects per dataset");
  synth->add_option("--sessions", so.sessions, "Corpus sessions per subject");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) return cmd_validate(o);
    if (*split) return cmd_split(o);
    if (*balance) return cmd_balance(o);
    if (*train_cmd) return cmd_train(o);
    if (*evaluate) return cmd_evaluate(o);
    if (*report) return cmd_report(o, report_inputs);
    if (*synth) return cmd_synth_stub(o, so);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
