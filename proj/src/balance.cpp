#include "pmi/balance.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace pmi {
namespace {

using json = nlohmann::ordered_json;

using ClassBuckets = std::array<std::vector<const SplitUnit*>, kPmiClassCount>;

ClassBuckets bucket_units(std::span<const SplitUnit> units) {
  if (units.empty()) throw Error("balancing needs at least one training record");
  ClassBuckets buckets;
  for (const auto& u : units) buckets[pmi_to_class(u.pmi_hours) - 1].push_back(&u);
  for (auto& b : buckets)
    std::sort(b.begin(), b.end(), [](auto* a, auto* c) { return a->id < c->id; });
  return buckets;
}

std::size_t largest(const ClassBuckets& buckets) {
  std::size_t m = 0;
  for (const auto& b : buckets) m = std::max(m, b.size());
  return m;
}

BalanceEntry real_entry(const SplitUnit& u) { return {EntryKind::real_ref, u.id, {}, u.pmi_hours}; }

}  // namespace

int pmi_to_class(double h) {
  if (!(h >= 0.0) || !std::isfinite(h)) throw Error("PMI must be a finite non-negative number of hours");
  if (h <= 24.0) return 1;
  if (h >= 409.0) return kPmiClassCount;
  return std::min(kPmiClassCount, static_cast<int>(std::ceil((h - 24.0) / 24.0)) + 1);
}

PmiClass pmi_class(int index) {
  if (index < 1 || index > kPmiClassCount)
    throw Error("PMI class index must be 1..18, got " + std::to_string(index));
  if (index == 1) return {1, 0.0, 24.0};
  if (index == kPmiClassCount) return {index, 409.0, std::nullopt};
  return {index, 24.0 * (index - 1) + 1.0, 24.0 * index};
}

double sample_pmi_within_class(int class_index, Rng& draw, double class18_cap) {
  auto c = pmi_class(class_index);
  double hi = c.hi.value_or(class18_cap);
  if (!(hi >= c.lo)) throw Error("class 18 cap must be >= 409 h");
  // uniform() < 1, so the draw stays inside [lo, hi].
  return draw.uniform(c.lo, hi);
}

std::string_view strategy_name(BalancingStrategy s) {
  switch (s) {
    case BalancingStrategy::none:
      return "none";
    case BalancingStrategy::real_upsample:
      return "real_upsample";
    case BalancingStrategy::synthetic_supplement:
      return "synthetic_supplement";
  }
  return "";
}

BalancingStrategy parse_strategy(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "none") return BalancingStrategy::none;
  if (lower == "real" || lower == "real_upsample" || lower == "s3-real") return BalancingStrategy::real_upsample;
  if (lower == "synthetic" || lower == "synthetic_supplement" || lower == "s3-synthetic")
    return BalancingStrategy::synthetic_supplement;
  throw Error("unknown balancing strategy '" + std::string(text) + "' (expected none, real or synthetic)");
}

std::size_t BalancingPlan::total() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.size();
  return n;
}

std::array<std::size_t, kPmiClassCount> BalancingPlan::histogram() const {
  std::array<std::size_t, kPmiClassCount> h{};
  for (int c = 0; c < kPmiClassCount; ++c) h[c] = classes[c].size();
  return h;
}

BalancingPlan plan_no_balancing(std::span<const SplitUnit> train_units, std::uint64_t seed) {
  auto buckets = bucket_units(train_units);
  BalancingPlan plan;
  plan.strategy = BalancingStrategy::none;
  plan.seed = seed;
  plan.fingerprint = fingerprint_units(train_units);
  plan.target_count = largest(buckets);
  for (int c = 0; c < kPmiClassCount; ++c)
    for (auto* u : buckets[c]) plan.classes[c].push_back(real_entry(*u));
  return plan;
}

BalancingPlan plan_real_upsampling(std::span<const SplitUnit> train_units, std::uint64_t seed) {
  auto buckets = bucket_units(train_units);
  BalancingPlan plan;
  plan.strategy = BalancingStrategy::real_upsample;
  plan.seed = seed;
  plan.fingerprint = fingerprint_units(train_units);
  plan.target_count = largest(buckets);
  for (int c = 0; c < kPmiClassCount; ++c) {
    const auto& bucket = buckets[c];
    if (bucket.empty()) continue;
    auto& entries = plan.classes[c];
    for (auto* u : bucket) entries.push_back(real_entry(*u));
    Rng rng(derive_seed(seed, "upsample", static_cast<std::uint64_t>(c + 1)));
    while (entries.size() < plan.target_count) entries.push_back(real_entry(*bucket[rng.index(bucket.size())]));
  }
  return plan;
}

BalancingPlan plan_synthetic_supplement(std::span<const SplitUnit> train_units, const SyntheticSource& provider,
                                        std::uint64_t seed, const SupplementOptions& options) {
  if (options.bands.empty()) throw Error("synthetic supplement needs at least one band");
  auto buckets = bucket_units(train_units);
  BalancingPlan plan;
  plan.strategy = BalancingStrategy::synthetic_supplement;
  plan.seed = seed;
  plan.fingerprint = fingerprint_units(train_units);
  plan.bands = options.bands;
  plan.class18_cap = options.class18_cap;
  const std::size_t max_real = largest(buckets);
  plan.target_count = options.target_count.value_or(max_real);
  if (plan.target_count < max_real)
    throw Error("synthetic target_count " + std::to_string(plan.target_count) +
                " is below the largest real class count " + std::to_string(max_real));

  for (int c = 0; c < kPmiClassCount; ++c) {
    const int cls = c + 1;
    auto& entries = plan.classes[c];
    for (auto* u : buckets[c]) entries.push_back(real_entry(*u));
    std::size_t needed = plan.target_count - entries.size();
    if (needed == 0) continue;

    std::vector<std::vector<SyntheticDescriptor>> per_band;
    for (Band b : options.bands) {
      if (!provider.serves(b, cls))
        throw Error("synthetic provider has no " + std::string(band_name(b)) + " images for PMI class " +
                    std::to_string(cls));
      per_band.push_back(provider.draw(b, cls, needed,
                                       derive_seed(seed, "supplement-draw", static_cast<std::uint64_t>(cls),
                                                   static_cast<std::uint64_t>(b))));
    }
    Rng pmi_rng(derive_seed(seed, "supplement-pmi", static_cast<std::uint64_t>(cls)));
    for (std::size_t i = 0; i < needed; ++i) {
      BalanceEntry e;
      e.kind = EntryKind::synthetic_insert;
      for (auto& descs : per_band) {
        if (!e.id.empty()) e.id += '+';
        e.id += descs[i].synthetic_id;
        e.synthetic.push_back(descs[i]);
      }
      e.assigned_pmi = sample_pmi_within_class(cls, pmi_rng, options.class18_cap);
      entries.push_back(std::move(e));
    }
  }
  return plan;
}

std::string balancing_plan_to_json(const BalancingPlan& plan) {
  json doc;
  doc["strategy"] = strategy_name(plan.strategy);
  doc["seed"] = plan.seed;
  doc["fingerprint"] = plan.fingerprint;
  doc["target_count"] = plan.target_count;
  json bands = json::array();
  for (Band b : plan.bands) bands.push_back(band_name(b));
  doc["bands"] = std::move(bands);
  doc["class18_cap"] = plan.class18_cap;
  json classes = json::array();
  for (int c = 0; c < kPmiClassCount; ++c) {
    json entries = json::array();
    for (const auto& e : plan.classes[c]) {
      json j;
      j["kind"] = e.kind == EntryKind::real_ref ? "real_ref" : "synthetic_insert";
      j["id"] = e.id;
      j["assigned_pmi"] = e.assigned_pmi;
      if (!e.synthetic.empty()) {
        json syn = json::array();
        for (const auto& d : e.synthetic)
          syn.push_back({{"synthetic_id", d.synthetic_id},
                         {"band", band_name(d.band)},
                         {"pmi_class", d.pmi_class},
                         {"image_path", d.image_path.generic_string()}});
        j["synthetic"] = std::move(syn);
      }
      entries.push_back(std::move(j));
    }
    classes.push_back({{"class", c + 1}, {"entries", std::move(entries)}});
  }
  doc["classes"] = std::move(classes);
  return doc.dump(2) + "\n";
}

BalancingPlan balancing_plan_from_json(const std::string& text) {
  BalancingPlan plan;
  try {
    auto doc = json::parse(text);
    plan.strategy = parse_strategy(doc.at("strategy").get<std::string>());
    plan.seed = doc.at("seed").get<std::uint64_t>();
    plan.fingerprint = doc.at("fingerprint").get<std::string>();
    plan.target_count = doc.at("target_count").get<std::size_t>();
    for (const auto& b : doc.value("bands", json::array())) plan.bands.push_back(parse_band(b.get<std::string>()));
    plan.class18_cap = doc.value("class18_cap", kDefaultClass18Cap);
    for (const auto& cls : doc.at("classes")) {
      int c = cls.at("class").get<int>();
      pmi_class(c);
      for (const auto& j : cls.at("entries")) {
        BalanceEntry e;
        auto kind = j.at("kind").get<std::string>();
        if (kind == "real_ref")
          e.kind = EntryKind::real_ref;
        else if (kind == "synthetic_insert")
          e.kind = EntryKind::synthetic_insert;
        else
          throw Error("unknown balancing entry kind '" + kind + "'");
        e.id = j.at("id").get<std::string>();
        e.assigned_pmi = j.at("assigned_pmi").get<double>();
        for (const auto& d : j.value("synthetic", json::array()))
          e.synthetic.push_back({d.at("synthetic_id").get<std::string>(), parse_band(d.at("band").get<std::string>()),
                                 d.at("pmi_class").get<int>(), d.at("image_path").get<std::string>()});
        plan.classes[c - 1].push_back(std::move(e));
      }
    }
  } catch (const json::exception& e) {
    throw Error(std::string("malformed balancing plan: ") + e.what());
  }
  return plan;
}

void save_balancing_plan(const BalancingPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write balancing plan '" + path.string() + "'");
  out << balancing_plan_to_json(plan);
}

BalancingPlan load_balancing_plan(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read balancing plan '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return balancing_plan_from_json(ss.str());
}

}  // namespace pmi
