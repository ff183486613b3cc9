#include "pmi/protocol.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "pmi/hash.hpp"
#include "pmi/random.hpp"

namespace pmi {
namespace {

using json = nlohmann::ordered_json;

std::vector<SplitUnit> sorted_units(std::span<const SplitUnit> units) {
  std::vector<SplitUnit> out(units.begin(), units.end());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i].id == out[i - 1].id) throw Error("duplicate split unit id '" + out[i].id + "'");
  return out;
}

/// Train = every unit not in the test set, both sorted.
std::vector<Fold> folds_from_test_sets(const std::vector<SplitUnit>& units,
                                       std::vector<std::vector<std::string>> tests) {
  std::vector<Fold> folds;
  for (auto& test : tests) {
    std::sort(test.begin(), test.end());
    std::unordered_set<std::string> in_test(test.begin(), test.end());
    Fold f;
    for (const auto& u : units)
      if (!in_test.count(u.id)) f.train_ids.push_back(u.id);
    f.test_ids = std::move(test);
    folds.push_back(std::move(f));
  }
  return folds;
}

}  // namespace

std::string_view scenario_name(Scenario s) {
  switch (s) {
    case Scenario::s1_sample_disjoint:
      return "S1_sample_disjoint";
    case Scenario::s2_subject_disjoint:
      return "S2_subject_disjoint";
    case Scenario::s3_cross_dataset:
      return "S3_cross_dataset";
  }
  return "";
}

Scenario parse_scenario(std::string_view text) {
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (upper == "S1" || upper == "S1_SAMPLE_DISJOINT") return Scenario::s1_sample_disjoint;
  if (upper == "S2" || upper == "S2_SUBJECT_DISJOINT") return Scenario::s2_subject_disjoint;
  if (upper == "S3" || upper == "S3_CROSS_DATASET") return Scenario::s3_cross_dataset;
  throw Error("unknown scenario '" + std::string(text) + "' (expected S1, S2 or S3)");
}

std::vector<SplitUnit> units_from_manifest(const Manifest& m) {
  std::vector<SplitUnit> units;
  units.reserve(m.records.size());
  for (const auto& r : m.records) units.push_back({r.sample_id, r.subject_id, r.dataset_id, r.pmi_hours});
  return units;
}

std::vector<SplitUnit> units_from_pairs(std::span<const MultispectralPair> pairs) {
  std::vector<SplitUnit> units;
  units.reserve(pairs.size());
  for (const auto& p : pairs) units.push_back({p.pair_id(), p.nir.subject_id, p.nir.dataset_id, p.pmi_hours});
  return units;
}

std::string fingerprint_units(std::span<const SplitUnit> units) {
  std::vector<const SplitUnit*> order;
  for (const auto& u : units) order.push_back(&u);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });
  std::string buf;
  char num[64];
  for (auto* u : order) {
    std::snprintf(num, sizeof num, "%.6f", u->pmi_hours);
    buf += u->id;
    buf += '|';
    buf += num;
    buf += '\n';
  }
  return sha256_hex(buf);
}

SplitPlan make_sample_disjoint_folds(std::span<const SplitUnit> in, int k, std::uint64_t seed) {
  if (k < 2) throw Error("fold count k must be >= 2");
  auto units = sorted_units(in);
  if (static_cast<std::size_t>(k) > units.size())
    throw Error("fold count k=" + std::to_string(k) + " exceeds the number of samples (" +
                std::to_string(units.size()) + ")");
  std::vector<std::string> ids;
  for (const auto& u : units) ids.push_back(u.id);
  Rng rng(derive_seed(seed, "split:S1"));
  rng.shuffle(ids.begin(), ids.end());
  std::vector<std::vector<std::string>> tests(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < ids.size(); ++i) tests[i % k].push_back(ids[i]);

  SplitPlan plan;
  plan.scenario = Scenario::s1_sample_disjoint;
  plan.seed = seed;
  plan.fingerprint = fingerprint_units(units);
  plan.folds = folds_from_test_sets(units, std::move(tests));
  return plan;
}

SplitPlan make_subject_disjoint_folds(std::span<const SplitUnit> in, int k, std::uint64_t seed) {
  if (k < 2) throw Error("fold count k must be >= 2");
  auto units = sorted_units(in);
  std::map<std::string, std::vector<std::string>> by_subject;
  for (const auto& u : units) by_subject[u.subject_id].push_back(u.id);
  if (static_cast<std::size_t>(k) > by_subject.size())
    throw Error("fold count k=" + std::to_string(k) + " exceeds the number of subjects (" +
                std::to_string(by_subject.size()) + ")");

  std::vector<const std::pair<const std::string, std::vector<std::string>>*> subjects;
  for (const auto& entry : by_subject) subjects.push_back(&entry);
  Rng rng(derive_seed(seed, "split:S2"));
  rng.shuffle(subjects.begin(), subjects.end());
  std::stable_sort(subjects.begin(), subjects.end(),
                   [](auto* a, auto* b) { return a->second.size() > b->second.size(); });

  std::vector<std::vector<std::string>> tests(static_cast<std::size_t>(k));
  for (auto* s : subjects) {
    auto smallest = std::min_element(tests.begin(), tests.end(),
                                     [](const auto& a, const auto& b) { return a.size() < b.size(); });
    smallest->insert(smallest->end(), s->second.begin(), s->second.end());
  }

  SplitPlan plan;
  plan.scenario = Scenario::s2_subject_disjoint;
  plan.seed = seed;
  plan.fingerprint = fingerprint_units(units);
  plan.folds = folds_from_test_sets(units, std::move(tests));
  return plan;
}

SplitPlan make_cross_dataset_split(std::span<const SplitUnit> in, const std::string& train_dataset_id,
                                   const std::string& test_dataset_id) {
  if (train_dataset_id == test_dataset_id)
    throw Error("cross-dataset split needs two different datasets (got '" + train_dataset_id +
                "' for both)");
  auto units = sorted_units(in);
  std::set<std::string> present;
  for (const auto& u : units) present.insert(u.dataset_id);
  for (const auto& id : {train_dataset_id, test_dataset_id})
    if (!present.count(id)) throw Error("unknown dataset_id '" + id + "'");

  Fold f;
  for (const auto& u : units) {
    if (u.dataset_id == train_dataset_id) f.train_ids.push_back(u.id);
    if (u.dataset_id == test_dataset_id) f.test_ids.push_back(u.id);
  }
  SplitPlan plan;
  plan.scenario = Scenario::s3_cross_dataset;
  plan.fingerprint = fingerprint_units(units);
  plan.train_dataset = train_dataset_id;
  plan.test_dataset = test_dataset_id;
  plan.folds.push_back(std::move(f));
  return plan;
}

SplitPlan make_sample_disjoint_folds(const Manifest& m, int k, std::uint64_t seed) {
  return make_sample_disjoint_folds(units_from_manifest(m), k, seed);
}
SplitPlan make_subject_disjoint_folds(const Manifest& m, int k, std::uint64_t seed) {
  return make_subject_disjoint_folds(units_from_manifest(m), k, seed);
}
SplitPlan make_cross_dataset_split(const Manifest& m, const std::string& train_dataset_id,
                                   const std::string& test_dataset_id) {
  return make_cross_dataset_split(units_from_manifest(m), train_dataset_id, test_dataset_id);
}

bool SplitAudit::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

const AuditCheck* SplitAudit::find(std::string_view name) const {
  for (const auto& c : checks)
    if (c.name == name) return &c;
  return nullptr;
}

SplitAudit verify_split(const SplitPlan& plan, std::span<const SplitUnit> units) {
  if (plan.fingerprint != fingerprint_units(units))
    throw Error("split plan fingerprint " + plan.fingerprint.substr(0, 12) +
                " does not match the manifest; regenerate the plan");

  std::unordered_map<std::string, const SplitUnit*> by_id;
  for (const auto& u : units) by_id.emplace(u.id, &u);

  SplitAudit audit;
  auto add = [&](std::string name, std::vector<std::string> bad) {
    std::sort(bad.begin(), bad.end());
    bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
    audit.checks.push_back({std::move(name), bad.empty(), std::move(bad)});
  };

  {
    std::vector<std::string> bad;
    for (const auto& f : plan.folds)
      for (const auto* ids : {&f.train_ids, &f.test_ids})
        for (const auto& id : *ids)
          if (!by_id.count(id)) bad.push_back(id);
    add("known_ids", std::move(bad));
  }
  {
    std::vector<std::string> bad;
    for (const auto& f : plan.folds) {
      std::unordered_set<std::string> train(f.train_ids.begin(), f.train_ids.end());
      for (const auto& id : f.test_ids)
        if (train.count(id)) bad.push_back(id);
    }
    add("fold_disjoint", std::move(bad));
  }

  auto subject_of = [&](const std::string& id) -> std::string {
    auto it = by_id.find(id);
    return it == by_id.end() ? std::string() : it->second->subject_id;
  };

  if (plan.scenario == Scenario::s3_cross_dataset) {
    std::vector<std::string> bad;
    if (plan.folds.size() != 1) bad.push_back(std::to_string(plan.folds.size()) + " folds");
    add("single_fold", std::move(bad));

    std::vector<std::string> overlap;
    for (const auto& f : plan.folds) {
      std::set<std::string> train_ds;
      for (const auto& id : f.train_ids)
        if (auto it = by_id.find(id); it != by_id.end()) train_ds.insert(it->second->dataset_id);
      for (const auto& id : f.test_ids)
        if (auto it = by_id.find(id); it != by_id.end() && train_ds.count(it->second->dataset_id))
          overlap.push_back(it->second->dataset_id);
    }
    add("dataset_disjoint", std::move(overlap));

    // Every unit of the two named datasets sits on its own side.
    std::vector<std::string> missing;
    for (const auto& f : plan.folds) {
      std::unordered_set<std::string> train(f.train_ids.begin(), f.train_ids.end());
      std::unordered_set<std::string> test(f.test_ids.begin(), f.test_ids.end());
      for (const auto& u : units) {
        if (u.dataset_id == plan.train_dataset && !train.count(u.id)) missing.push_back(u.id);
        if (u.dataset_id == plan.test_dataset && !test.count(u.id)) missing.push_back(u.id);
      }
    }
    add("dataset_coverage", std::move(missing));
  } else {
    std::vector<std::string> coverage;
    for (const auto& f : plan.folds) {
      std::unordered_set<std::string> seen(f.train_ids.begin(), f.train_ids.end());
      seen.insert(f.test_ids.begin(), f.test_ids.end());
      for (const auto& u : units)
        if (!seen.count(u.id)) coverage.push_back(u.id);
    }
    add("fold_coverage", std::move(coverage));

    std::unordered_map<std::string, int> test_count;
    for (const auto& f : plan.folds)
      for (const auto& id : f.test_ids) ++test_count[id];
    std::vector<std::string> partition;
    for (const auto& u : units)
      if (test_count[u.id] != 1) partition.push_back(u.id);
    add("test_partition", std::move(partition));
  }

  if (plan.scenario != Scenario::s1_sample_disjoint) {
    std::vector<std::string> leaked;
    for (const auto& f : plan.folds) {
      std::unordered_set<std::string> train_subjects;
      for (const auto& id : f.train_ids) train_subjects.insert(subject_of(id));
      for (const auto& id : f.test_ids) {
        auto s = subject_of(id);
        if (!s.empty() && train_subjects.count(s)) leaked.push_back(s);
      }
    }
    add("subject_disjoint", std::move(leaked));
  }
  return audit;
}

SplitAudit verify_split(const SplitPlan& plan, const Manifest& manifest) {
  return verify_split(plan, units_from_manifest(manifest));
}

std::string split_plan_to_json(const SplitPlan& plan) {
  json doc;
  doc["scenario"] = scenario_name(plan.scenario);
  doc["seed"] = plan.seed;
  doc["fingerprint"] = plan.fingerprint;
  doc["unit_kind"] = plan.unit_kind;
  if (plan.scenario == Scenario::s3_cross_dataset) {
    doc["train_dataset"] = plan.train_dataset;
    doc["test_dataset"] = plan.test_dataset;
  }
  json folds = json::array();
  for (const auto& f : plan.folds) folds.push_back({{"train", f.train_ids}, {"test", f.test_ids}});
  doc["folds"] = std::move(folds);
  return doc.dump(2) + "\n";
}

SplitPlan split_plan_from_json(const std::string& text) {
  SplitPlan plan;
  try {
    auto doc = json::parse(text);
    plan.scenario = parse_scenario(doc.at("scenario").get<std::string>());
    plan.seed = doc.at("seed").get<std::uint64_t>();
    plan.fingerprint = doc.at("fingerprint").get<std::string>();
    plan.unit_kind = doc.value("unit_kind", std::string("sample"));
    plan.train_dataset = doc.value("train_dataset", std::string());
    plan.test_dataset = doc.value("test_dataset", std::string());
    for (const auto& f : doc.at("folds"))
      plan.folds.push_back({f.at("train").get<std::vector<std::string>>(),
                            f.at("test").get<std::vector<std::string>>()});
  } catch (const json::exception& e) {
    throw Error(std::string("malformed split plan: ") + e.what());
  }
  return plan;
}

void save_split_plan(const SplitPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write split plan '" + path.string() + "'");
  out << split_plan_to_json(plan);
}

SplitPlan load_split_plan(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read split plan '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return split_plan_from_json(ss.str());
}

}  // namespace pmi
