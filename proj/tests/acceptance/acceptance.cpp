// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run all eight
//   acceptance 1 4 5      run a subset
//
// Exit status is non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pmi/balance.hpp"
#include "pmi/evaluate.hpp"
#include "pmi/experiment.hpp"
#include "pmi/model.hpp"
#include "pmi/pmi_class.hpp"
#include "pmi/protocol.hpp"
#include "pmi/synth_provider.hpp"

namespace fs = std::filesystem;
using namespace pmi;

namespace {

struct Outcome {
  bool passed = true;
  std::string detail;
};

// Collects the first few failure messages of a criterion.
struct Failures {
  std::vector<std::string> messages;
  std::size_t count = 0;

  void add(const std::string& m) {
    if (count++ < 5) messages.push_back(m);
  }
  bool empty() const { return count == 0; }
  std::string summary() const {
    std::string s = std::to_string(count) + " failure(s)";
    for (const auto& m : messages) s += "; " + m;
    return s;
  }
};

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("pmi_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// 1. Split discipline

std::vector<SplitUnit> random_toy_units(Rng& rng, int& datasets) {
  const int n = 5 + static_cast<int>(rng.index(196));                            // 5..200
  const int subjects = 2 + static_cast<int>(rng.index(std::min(40, n) - 1));     // 2..min(40, n)
  datasets = 1 + static_cast<int>(rng.index(2));
  std::vector<std::string> subject_dataset(subjects);
  for (int s = 0; s < subjects; ++s) {
    int d = s < datasets ? s : static_cast<int>(rng.index(datasets));
    subject_dataset[s] = "ds" + std::to_string(d);
  }
  std::vector<SplitUnit> units;
  for (int i = 0; i < n; ++i) {
    int s = i < subjects ? i : static_cast<int>(rng.index(subjects));
    SplitUnit u;
    u.id = "sample" + std::to_string(i);
    u.subject_id = subject_dataset[s] + "/subj" + std::to_string(s);
    u.dataset_id = subject_dataset[s];
    u.pmi_hours = rng.uniform(0.0, 1700.0);
    units.push_back(u);
  }
  rng.shuffle(units.begin(), units.end());
  return units;
}

bool check_failed(const SplitAudit& audit, std::string_view name) {
  const auto* c = audit.find(name);
  return c && !c->passed;
}

Outcome criterion_split() {
  Failures fail;
  int plans = 0, mutations = 0;
  for (int m = 0; m < 50; ++m) {
    Rng rng(derive_seed(101, "toy-manifest", m));
    int datasets = 1;
    auto units = random_toy_units(rng, datasets);
    std::set<std::string> subjects;
    for (const auto& u : units) subjects.insert(u.subject_id);
    const std::string tag = "manifest " + std::to_string(m);

    const int k1 = 2 + static_cast<int>(rng.index(std::min<std::size_t>(10, units.size()) - 1));
    const int k2 = 2 + static_cast<int>(rng.index(std::min<std::size_t>(10, subjects.size()) - 1));
    std::vector<SplitPlan> generated{make_sample_disjoint_folds(units, k1, m),
                                     make_subject_disjoint_folds(units, k2, m)};
    if (datasets == 2) generated.push_back(make_cross_dataset_split(units, "ds0", "ds1"));

    for (const auto& plan : generated) {
      ++plans;
      auto audit = verify_split(plan, units);
      if (!audit.passed()) fail.add(tag + ": generated " + std::string(scenario_name(plan.scenario)) + " plan fails audit");
      if (plan.scenario == Scenario::s2_subject_disjoint) {
        // S2 must also satisfy every S1 invariant.
        SplitPlan as_s1 = plan;
        as_s1.scenario = Scenario::s1_sample_disjoint;
        if (!verify_split(as_s1, units).passed()) fail.add(tag + ": S2 plan fails S1 checks");
      }

      // Mutation: drop one sample.
      {
        SplitPlan bad = plan;
        auto& side = bad.scenario == Scenario::s3_cross_dataset && rng.index(2) == 0 ? bad.folds[0].train_ids
                                                                                   : bad.folds[rng.index(bad.folds.size())].test_ids;
        if (!side.empty()) {
          ++mutations;
          side.erase(side.begin() + static_cast<std::ptrdiff_t>(rng.index(side.size())));
          auto a = verify_split(bad, units);
          const bool caught = bad.scenario == Scenario::s3_cross_dataset ? check_failed(a, "dataset_coverage")
                                                                         : check_failed(a, "test_partition");
          if (!caught || a.passed()) fail.add(tag + ": dropped sample not caught in " + std::string(scenario_name(plan.scenario)));
        }
      }

      // Mutation: leak one subject.
      if (plan.scenario == Scenario::s2_subject_disjoint) {
        ++mutations;
        const auto f = rng.index(plan.folds.size());
        const auto& fold = plan.folds[f];
        std::map<std::string, const SplitUnit*> by_id;
        for (const auto& u : units) by_id[u.id] = &u;
        const std::string leaked = by_id[fold.test_ids[rng.index(fold.test_ids.size())]]->subject_id;
        const std::string victim = fold.train_ids[rng.index(fold.train_ids.size())];
        auto mutated = units;
        for (auto& u : mutated)
          if (u.id == victim) u.subject_id = leaked;
        auto a = verify_split(plan, mutated);
        const auto* c = a.find("subject_disjoint");
        if (!c || c->passed || std::find(c->counterexamples.begin(), c->counterexamples.end(), leaked) == c->counterexamples.end())
          fail.add(tag + ": leaked subject " + leaked + " not named");
      } else if (plan.scenario == Scenario::s3_cross_dataset) {
        ++mutations;
        SplitPlan bad = plan;
        auto& test = bad.folds[0].test_ids;
        const auto i = rng.index(test.size());
        bad.folds[0].train_ids.push_back(test[i]);
        std::sort(bad.folds[0].train_ids.begin(), bad.folds[0].train_ids.end());
        auto a = verify_split(bad, units);
        if (!check_failed(a, "dataset_disjoint")) fail.add(tag + ": S3 leak not caught");
      }
    }
  }
  std::ostringstream d;
  d << "50 manifests, " << plans << " plans audited, " << mutations << " mutations";
  if (!fail.empty()) d << "; " << fail.summary();
  return {fail.empty(), d.str()};
}

// ---------------------------------------------------------------------------
// 2. Binning

// Independent statement of the bins over fractional hours.
bool in_class(double h, int c) {
  if (c == 1) return h >= 0.0 && h <= 24.0;
  if (c == 18) return h > 408.0;
  return h > 24.0 * (c - 1) && h <= 24.0 * c;
}

Outcome criterion_binning() {
  Failures fail;
  int values = 0;
  for (int step = 0; step <= 3400; ++step) {
    const double h = 0.5 * step;
    ++values;
    int owners = 0, owner = 0;
    for (int c = 1; c <= kPmiClassCount; ++c)
      if (in_class(h, c)) ++owners, owner = c;
    const int got = pmi_to_class(h);
    if (owners != 1 || got != owner) fail.add("h=" + std::to_string(h) + " -> " + std::to_string(got));
  }
  for (int c = 1; c <= kPmiClassCount; ++c) {
    Rng rng(derive_seed(202, "binning", c));
    for (int i = 0; i < 10000; ++i) {
      const double h = sample_pmi_within_class(c, rng);
      if (pmi_to_class(h) != c) fail.add("class " + std::to_string(c) + " draw " + std::to_string(h));
    }
  }
  std::ostringstream d;
  d << values << " sweep values, 18 x 10000 draws";
  if (!fail.empty()) d << "; " << fail.summary();
  return {fail.empty(), d.str()};
}

// ---------------------------------------------------------------------------
// 3. Balancing

std::vector<SplitUnit> units_with_histogram(const std::array<int, kPmiClassCount>& hist, Rng& rng) {
  std::vector<SplitUnit> units;
  for (int c = 1; c <= kPmiClassCount; ++c)
    for (int i = 0; i < hist[c - 1]; ++i) {
      SplitUnit u;
      u.id = "c" + std::to_string(c) + "_" + std::to_string(i);
      u.subject_id = "s" + std::to_string(rng.index(12));
      u.dataset_id = "train";
      u.pmi_hours = sample_pmi_within_class(c, rng);
      units.push_back(u);
    }
  return units;
}

Outcome criterion_balancing() {
  Failures fail;
  StubSynthesizer provider;
  for (int t = 0; t < 100; ++t) {
    Rng rng(derive_seed(303, "histogram", t));
    std::array<int, kPmiClassCount> hist{};
    const double empty_rate = rng.uniform(0.0, 0.8);
    for (auto& h : hist) h = rng.uniform() < empty_rate ? 0 : 1 + static_cast<int>(rng.index(40));
    if (std::all_of(hist.begin(), hist.end(), [](int h) { return h == 0; })) hist[rng.index(kPmiClassCount)] = 1;
    const int largest = *std::max_element(hist.begin(), hist.end());
    auto units = units_with_histogram(hist, rng);
    std::map<std::string, int> class_of;
    for (const auto& u : units) class_of[u.id] = pmi_to_class(u.pmi_hours);
    const std::string tag = "case " + std::to_string(t);

    auto real = plan_real_upsampling(units, t);
    std::set<std::string> referenced;
    for (int c = 1; c <= kPmiClassCount; ++c) {
      const auto& entries = real.classes[c - 1];
      const std::size_t want = hist[c - 1] == 0 ? 0 : static_cast<std::size_t>(largest);
      if (entries.size() != want) fail.add(tag + ": real class " + std::to_string(c) + " has " + std::to_string(entries.size()));
      for (const auto& e : entries) {
        if (e.kind != EntryKind::real_ref || !class_of.count(e.id) || class_of[e.id] != c)
          fail.add(tag + ": real plan entry " + e.id + " is not a real unit of class " + std::to_string(c));
        referenced.insert(e.id);
      }
    }
    if (referenced.size() != units.size()) fail.add(tag + ": real plan drops units");

    auto synth = plan_synthetic_supplement(units, provider, t);
    std::map<std::string, int> real_uses;
    for (int c = 1; c <= kPmiClassCount; ++c) {
      const auto& entries = synth.classes[c - 1];
      if (entries.size() != static_cast<std::size_t>(largest))
        fail.add(tag + ": synthetic class " + std::to_string(c) + " has " + std::to_string(entries.size()));
      for (const auto& e : entries) {
        if (e.kind == EntryKind::real_ref) {
          ++real_uses[e.id];
          if (!class_of.count(e.id) || class_of[e.id] != c) fail.add(tag + ": misplaced real ref " + e.id);
        } else {
          const double h = e.assigned_pmi;
          const bool in_range = in_class(h, c) && h <= synth.class18_cap;
          if (!in_range || pmi_to_class(h) != c)
            fail.add(tag + ": insert PMI " + std::to_string(h) + " outside class " + std::to_string(c));
          if (e.synthetic.size() != 1) fail.add(tag + ": insert without a descriptor");
        }
      }
    }
    for (const auto& u : units)
      if (real_uses[u.id] != 1) fail.add(tag + ": real unit " + u.id + " used " + std::to_string(real_uses[u.id]) + " times");
  }
  std::ostringstream d;
  d << "100 random histograms";
  if (!fail.empty()) d << "; " << fail.summary();
  return {fail.empty(), d.str()};
}

// ---------------------------------------------------------------------------
// 4. Metrics

Outcome criterion_metrics() {
  Failures fail;
  auto relative = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); };
  for (int t = 0; t < 1000; ++t) {
    Rng rng(derive_seed(404, "metric-vector", t));
    const std::size_t n = 1 + rng.index(500);
    std::vector<double> p(n), y(n);
    const double scale = std::pow(10.0, rng.uniform(-2.0, 3.0));
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform(0.0, 1700.0);
      p[i] = y[i] + scale * rng.normal();
    }
    long double sq = 0, ab = 0;
    for (std::size_t i = 0; i < n; ++i) {
      long double e = static_cast<long double>(p[i]) - static_cast<long double>(y[i]);
      sq += e * e;
      ab += e < 0 ? -e : e;
    }
    const double want_rmse = static_cast<double>(std::sqrt(sq / n));
    const double want_mae = static_cast<double>(ab / n);
    const double r = rmse(p, y), m = mae(p, y);
    if (relative(r, want_rmse) > 1e-9) fail.add("rmse vector " + std::to_string(t));
    if (relative(m, want_mae) > 1e-9) fail.add("mae vector " + std::to_string(t));
    if (!(r >= m)) fail.add("rmse < mae on vector " + std::to_string(t));
  }
  const std::vector<double> p{0, 0}, y{3, 4};
  if (rmse(p, y) != std::sqrt(12.5)) fail.add("rmse([0,0],[3,4]) != sqrt(12.5)");
  if (mae(p, y) != 3.5) fail.add("mae([0,0],[3,4]) != 3.5");
  std::ostringstream d;
  d << "1000 vectors vs brute force, sqrt(12.5) and 3.5 exact";
  if (!fail.empty()) d << "; " << fail.summary();
  return {fail.empty(), d.str()};
}

// ---------------------------------------------------------------------------
// 5. Fusion head

Outcome criterion_fusion() {
  Failures fail;
  {
    FusionHeadParams p;
    p.W1 = Eigen::MatrixXd::Identity(2, 2);
    p.b1 = Eigen::VectorXd::Zero(2);
    p.W2 = Eigen::VectorXd::Ones(2);
    p.b2 = 0.0;
    Eigen::VectorXd e_nir(1), e_rgb(1);
    e_nir << 2.0;
    e_rgb << -3.0;
    const double y = fuse_forward(e_nir, e_rgb, p);
    // Hand arithmetic: W1 (2, -3) = (2, -3); ReLU -> (2, 0); W2 . (2, 0) = 2.
    if (y != 2.0) fail.add("hand example gave " + std::to_string(y));
  }

  const int d_nir = 3, d_rgb = 4, hidden = 5;
  const double h = 1e-6, tol = 1e-4;
  int resampled = 0;
  for (int point = 0; point < 20; ++point) {
    Rng rng(derive_seed(505, "fusion-point", point));
    FusionHeadParams p;
    Eigen::VectorXd e_nir(d_nir), e_rgb(d_rgb);
    for (;;) {
      p.W1.resize(hidden, d_nir + d_rgb);
      p.b1.resize(hidden);
      p.W2.resize(hidden);
      for (int i = 0; i < p.W1.size(); ++i) p.W1.data()[i] = rng.normal();
      for (int i = 0; i < hidden; ++i) p.b1[i] = rng.normal(), p.W2[i] = rng.normal();
      p.b2 = rng.normal();
      for (int i = 0; i < d_nir; ++i) e_nir[i] = rng.normal();
      for (int i = 0; i < d_rgb; ++i) e_rgb[i] = rng.normal();
      Eigen::VectorXd x(d_nir + d_rgb);
      x << e_nir, e_rgb;
      Eigen::VectorXd pre = p.W1 * x + p.b1;
      if (pre.cwiseAbs().minCoeff() >= 1e-3) break;
      ++resampled;
    }
    const auto g = fuse_backward(e_nir, e_rgb, p);

    auto check = [&](const std::string& what, double analytic, const std::function<double(double)>& f_at) {
      const double numeric = (f_at(h) - f_at(-h)) / (2 * h);
      const double denom = std::max(std::abs(analytic), std::abs(numeric));
      if (denom > 0 && std::abs(analytic - numeric) / denom > tol)
        fail.add("point " + std::to_string(point) + " " + what + ": " + std::to_string(analytic) + " vs " +
                 std::to_string(numeric));
    };
    for (int i = 0; i < p.W1.rows(); ++i)
      for (int j = 0; j < p.W1.cols(); ++j)
        check("W1", g.W1(i, j), [&](double dx) { auto q = p; q.W1(i, j) += dx; return fuse_forward(e_nir, e_rgb, q); });
    for (int i = 0; i < hidden; ++i) {
      check("b1", g.b1[i], [&](double dx) { auto q = p; q.b1[i] += dx; return fuse_forward(e_nir, e_rgb, q); });
      check("W2", g.W2[i], [&](double dx) { auto q = p; q.W2[i] += dx; return fuse_forward(e_nir, e_rgb, q); });
    }
    check("b2", g.b2, [&](double dx) { auto q = p; q.b2 += dx; return fuse_forward(e_nir, e_rgb, q); });
    for (int i = 0; i < d_nir; ++i)
      check("e_nir", g.e_nir[i], [&](double dx) { auto e = e_nir; e[i] += dx; return fuse_forward(e, e_rgb, p); });
    for (int i = 0; i < d_rgb; ++i)
      check("e_rgb", g.e_rgb[i], [&](double dx) { auto e = e_rgb; e[i] += dx; return fuse_forward(e_nir, e, p); });
  }
  std::ostringstream d;
  d << "hand example exact, 20 points checked (" << resampled << " resampled near a kink)";
  if (!fail.empty()) d << "; " << fail.summary();
  return {fail.empty(), d.str()};
}

// ---------------------------------------------------------------------------
// 6 and 8. Desk-scale learnability

constexpr int kLearnEpochs = 30;

struct LearnRun {
  ExperimentResult result;
  std::vector<std::string> balancing_json;  // real and synthetic plan per fold
};

RunConfig learnability_config(const fs::path& dir) {
  RunConfig c;
  c.manifest = dir / "manifest.csv";
  c.scenario = Scenario::s2_subject_disjoint;
  c.band = BandMode::nir;
  c.backbone = BackboneName::toy_cnn;
  c.k = 5;
  c.seed = 606;
  c.out = dir / "run";
  c.train.epochs = kLearnEpochs;
  c.train.learning_rate = 1e-3;
  c.train.normalize_targets = true;
  return c;
}

LearnRun learnability_run(const std::string& name) {
  const auto dir = scratch_dir(name);
  // 20 subjects followed through all 18 classes: 20 samples per class.
  StubCorpusOptions o;
  o.datasets = {"stub"};
  o.subjects_per_dataset = 20;
  o.sessions_per_subject = 18;
  o.bands = {Band::nir};
  o.seed = 606;
  const auto specs = stub_corpus_layout(o);
  write_stub_corpus(dir, specs, o.seed);

  const auto config = learnability_config(dir);
  LearnRun run;
  run.result = run_experiment(config, nullptr, true);

  // The S2 run itself is unbalanced; both balancing plans are still derived
  // per fold so their reproducibility is covered.
  auto data = prepare_data(config);
  StubSynthesizer provider;
  for (std::size_t f = 0; f < run.result.split.folds.size(); ++f) {
    const auto units = data->units(run.result.split.folds[f].train_ids);
    run.balancing_json.push_back(balancing_plan_to_json(plan_real_upsampling(units, derive_seed(config.seed, "balance", f))));
    run.balancing_json.push_back(
        balancing_plan_to_json(plan_synthetic_supplement(units, provider, derive_seed(config.seed, "balance", f))));
  }
  return run;
}

// Criterion 8 compares a fresh run against this one.
std::optional<LearnRun> first_learn_run;

Outcome criterion_learnability() {
  first_learn_run = learnability_run("learn");
  const auto& run = *first_learn_run;
  const double model = run.result.report.summary.mae.mean;
  const double baseline = run.result.baseline_report.summary.mae.mean;
  const double reduction = 1.0 - model / baseline;
  std::ostringstream d;
  d.precision(4);
  d << "360 NIR stubs, toy_cnn " << kLearnEpochs << " epochs, S2 5-fold: mean MAE " << model << " h vs baseline "
    << baseline << " h (" << 100.0 * reduction << "% lower, need >= 30%)";
  return {reduction >= 0.30, d.str()};
}

Outcome criterion_determinism() {
  if (!first_learn_run) first_learn_run = learnability_run("learn");
  const auto& a = *first_learn_run;
  const auto b = learnability_run("determinism");
  Failures fail;
  if (split_plan_to_json(a.result.split) != split_plan_to_json(b.result.split)) fail.add("SplitPlan differs");
  if (a.balancing_json != b.balancing_json) fail.add("BalancingPlan differs");
  // Single-threaded CPU kernels: reports must match bit for bit.
  if (a.result.report.to_json() != b.result.report.to_json()) fail.add("MetricsReport differs");
  for (std::size_t f = 0; f < a.result.folds.size(); ++f)
    if (a.result.folds[f].history.train_loss != b.result.folds[f].history.train_loss)
      fail.add("loss curve of fold " + std::to_string(f) + " differs");
  std::ostringstream d;
  d << "two runs of the learnability experiment: SplitPlan, " << a.balancing_json.size()
    << " BalancingPlans, MetricsReport and loss curves compared byte for byte";
  if (!fail.empty()) d << "; " << fail.summary();
  return {fail.empty(), d.str()};
}

// ---------------------------------------------------------------------------
// 7. Balancing benefit

constexpr int kBalanceEpochs = 20;

// Training dataset "skewed": 100 samples, 90 in classes 1-3. Test dataset
// "uniform": 3 samples in each of the 18 classes.
std::vector<StubSampleSpec> skewed_corpus(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "skewed-corpus"));
  std::vector<int> train_classes;
  for (int c = 1; c <= 3; ++c) train_classes.insert(train_classes.end(), 30, c);
  for (int i = 0; i < 10; ++i) train_classes.push_back(4 + (i * 15) / 10 + static_cast<int>(rng.index(2)));
  rng.shuffle(train_classes.begin(), train_classes.end());

  std::vector<StubSampleSpec> specs;
  auto add = [&](const std::string& dataset, int subject, int session, int c) {
    StubSampleSpec s;
    s.dataset_id = dataset;
    s.subject_id = dataset + "_s" + std::to_string(subject);
    s.eye = session % 2 == 0 ? Eye::left : Eye::right;
    s.session_id = "sess" + std::to_string(session);
    s.band = Band::nir;
    s.pmi_hours = sample_pmi_within_class(c, rng);
    specs.push_back(s);
  };
  for (std::size_t i = 0; i < train_classes.size(); ++i)
    add("skewed", static_cast<int>(i / 10), static_cast<int>(i % 10), train_classes[i]);
  for (int i = 0; i < 54; ++i) add("uniform", i / 6, i % 6, 1 + i % 18);
  return specs;
}

Outcome criterion_balancing_benefit() {
  std::ostringstream d;
  d.precision(4);
  int wins = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto dir = scratch_dir("balance_" + std::to_string(seed));
    const auto specs = skewed_corpus(seed);
    write_stub_corpus(dir, specs, seed);

    RunConfig c;
    c.manifest = dir / "manifest.csv";
    c.scenario = Scenario::s3_cross_dataset;
    c.train_dataset = "skewed";
    c.test_dataset = "uniform";
    c.backbone = BackboneName::toy_cnn;
    c.seed = seed;
    c.train.epochs = kBalanceEpochs;
    c.train.learning_rate = 1e-3;
    c.train.normalize_targets = true;

    StubSynthesizer provider;
    c.balancing = BalancingStrategy::none;
    const double plain = run_experiment(c, &provider).report.summary.mae.mean;
    c.balancing = BalancingStrategy::synthetic_supplement;
    c.synthetic = "stub";
    const double balanced = run_experiment(c, &provider).report.summary.mae.mean;
    if (balanced < plain) ++wins;
    d << (seed == 1 ? "" : ", ") << "seed " << seed << ": " << balanced << " vs " << plain;
  }
  std::ostringstream out;
  out << wins << "/3 seeds with lower S3-synthetic MAE (balanced vs unbalanced, hours: " << d.str() << ")";
  return {wins == 3, out.str()};
}

struct Criterion {
  int number;
  std::string name;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "split discipline", 30, criterion_split},
      {2, "binning oracle", 10, criterion_binning},
      {3, "balancing invariants", 30, criterion_balancing},
      {4, "metric oracles", 10, criterion_metrics},
      {5, "fusion head", 30, criterion_fusion},
      {6, "desk-scale learnability", 600, criterion_learnability},
      {7, "balancing benefit direction", 1200, criterion_balancing_benefit},
      {8, "determinism", 0, criterion_determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.number)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.limit_seconds <= 0 || seconds < c.limit_seconds;
    const bool pass = o.passed && in_time;
    if (!pass) ++failed;
    std::string timing = std::to_string(seconds).substr(0, std::to_string(seconds).find('.') + 2) + " s";
    if (c.limit_seconds > 0) timing += ", limit " + std::to_string(static_cast<int>(c.limit_seconds)) + " s";
    if (!in_time) timing += ", exceeded";
    std::printf("[%s] criterion %d (%s): %s [%s]\n", pass ? "PASS" : "FAIL", c.number, c.name.c_str(),
                o.detail.c_str(), timing.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
