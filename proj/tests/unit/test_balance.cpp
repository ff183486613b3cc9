#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "helpers.hpp"
#include "pmi/balance.hpp"
#include "pmi/pmi_class.hpp"

using namespace pmi;

namespace {

// n units of each listed class, PMI at the class's lower bound plus a little.
std::vector<SplitUnit> with_counts(const std::map<int, int>& counts) {
  std::vector<SplitUnit> out;
  for (const auto& [c, n] : counts)
    for (int i = 0; i < n; ++i) {
      const double lo = pmi_class(c).lo;
      out.push_back({"c" + std::to_string(c) + "_" + std::to_string(i), "s" + std::to_string(i), "d", lo + 0.5});
    }
  return out;
}

std::size_t inserts(const BalancingPlan& p, int c) {
  const auto& e = p.classes[c - 1];
  return static_cast<std::size_t>(std::count_if(e.begin(), e.end(), [](const BalanceEntry& x) { return x.kind == EntryKind::synthetic_insert; }));
}

}  // namespace

TEST_SUITE("balance") {
  TEST_CASE("class boundaries") {
    CHECK(pmi_to_class(10) == 1);
    CHECK(pmi_to_class(25) == 2);
    CHECK(pmi_to_class(500) == 18);
    CHECK(pmi_to_class(24.5) == 2);
    CHECK(pmi_to_class(0) == 1);
    CHECK(pmi_to_class(24) == 1);
    CHECK(pmi_to_class(48) == 2);
    CHECK(pmi_to_class(408) == 17);
    CHECK(pmi_to_class(409) == 18);
    CHECK_THROWS_AS(pmi_to_class(-1), Error);
    CHECK_THROWS_AS(pmi_class(0), Error);
    CHECK_THROWS_AS(pmi_class(19), Error);
    CHECK(pmi_class(2).lo == 25);
    CHECK(*pmi_class(2).hi == 48);
    CHECK(pmi_class(18).lo == 409);
    CHECK_FALSE(pmi_class(18).hi.has_value());
  }

  TEST_CASE("sweep 0..450 in half hours lands in exactly one class") {
    for (int step = 0; step <= 900; ++step) {
      const double h = 0.5 * step;
      int owners = 0;
      for (int c = 1; c <= 18; ++c) {
        const bool in = c == 1 ? h <= 24 : c == 18 ? h > 408 : (h > 24.0 * (c - 1) && h <= 24.0 * c);
        owners += in;
        if (in) CHECK(pmi_to_class(h) == c);
      }
      CHECK(owners == 1);
    }
  }

  TEST_CASE("within-class draws") {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
      const double a = sample_pmi_within_class(1, rng);
      CHECK((a >= 0 && a <= 24));
      const double b = sample_pmi_within_class(18, rng);
      CHECK((b >= 409 && b <= 1674));
    }
    // Class 2 is uniform on [25, 48]: mean 36.5, sd 23/sqrt(12) ~ 6.64, so
    // the mean of 10^4 draws has sd ~ 0.066 and 36.5 +- 1 is ~15 sigma.
    double lo = 1e9, hi = -1e9, sum = 0;
    for (int i = 0; i < 10000; ++i) {
      const double h = sample_pmi_within_class(2, rng);
      lo = std::min(lo, h);
      hi = std::max(hi, h);
      sum += h;
    }
    CHECK(lo >= 25);
    CHECK(hi <= 48);
    CHECK(std::abs(sum / 10000 - 36.5) <= 1.0);
    CHECK_THROWS_AS(sample_pmi_within_class(0, rng), Error);
    CHECK_THROWS_AS(sample_pmi_within_class(18, rng, 100), Error);
  }

  TEST_CASE("real upsampling: counts {1:5, 2:3}") {
    auto u = with_counts({{1, 5}, {2, 3}});
    auto p = plan_real_upsampling(u, 7);
    CHECK(p.strategy == BalancingStrategy::real_upsample);
    CHECK(p.target_count == 5);
    CHECK(p.classes[0].size() == 5);
    REQUIRE(p.classes[1].size() == 5);
    std::map<std::string, int> uses;
    for (const auto& e : p.classes[1]) {
      CHECK(e.kind == EntryKind::real_ref);
      ++uses[e.id];
    }
    // Five entries from three samples: something repeats.
    CHECK(uses.size() == 3);
    CHECK(std::any_of(uses.begin(), uses.end(), [](const auto& kv) { return kv.second > 1; }));
    for (int c = 3; c <= 18; ++c) CHECK(p.classes[c - 1].empty());
  }

  TEST_CASE("real upsampling of uniform or single-class input is the identity multiset") {
    auto u = with_counts({{3, 4}, {7, 4}, {18, 4}});
    auto p = plan_real_upsampling(u, 1);
    std::multiset<std::string> got, want;
    for (const auto& cls : p.classes)
      for (const auto& e : cls) got.insert(e.id);
    for (const auto& x : u) want.insert(x.id);
    CHECK(got == want);

    auto single = with_counts({{5, 3}});
    auto q = plan_real_upsampling(single, 1);
    CHECK(q.total() == 3);
    CHECK(q.classes[4].size() == 3);
    CHECK_THROWS_AS(plan_real_upsampling(std::vector<SplitUnit>{}, 1), Error);
  }

  TEST_CASE("synthetic supplement: counts {1:4, 2:1, 3:0}, target 4") {
    auto u = with_counts({{1, 4}, {2, 1}});
    StubSynthesizer provider;
    auto p = plan_synthetic_supplement(u, provider, 3);
    CHECK(p.target_count == 4);
    CHECK(inserts(p, 1) == 0);
    CHECK(inserts(p, 2) == 3);
    CHECK(inserts(p, 3) == 4);
    for (int c = 1; c <= 18; ++c) {
      CHECK(p.classes[c - 1].size() == 4);
      for (const auto& e : p.classes[c - 1])
        if (e.kind == EntryKind::synthetic_insert) {
          CHECK(pmi_to_class(e.assigned_pmi) == c);
          REQUIRE(e.synthetic.size() == 1);
          CHECK(e.synthetic[0].pmi_class == c);
        }
    }
  }

  TEST_CASE("synthetic supplement keeps real samples once and their labels") {
    auto u = with_counts({{1, 6}, {9, 2}, {18, 1}});
    StubSynthesizer provider;
    SupplementOptions opts;
    opts.bands = {Band::nir, Band::rgb};
    opts.target_count = 10;
    auto p = plan_synthetic_supplement(u, provider, 5, opts);
    std::map<std::string, int> uses;
    for (const auto& cls : p.classes)
      for (const auto& e : cls) {
        if (e.kind == EntryKind::real_ref) {
          ++uses[e.id];
        } else {
          REQUIRE(e.synthetic.size() == 2);
          CHECK(e.synthetic[0].band == Band::nir);
          CHECK(e.synthetic[1].band == Band::rgb);
        }
      }
    for (const auto& x : u) CHECK(uses[x.id] == 1);
    CHECK(p.total() == 180);
    opts.target_count = 5;
    CHECK_THROWS_AS(plan_synthetic_supplement(u, provider, 5, opts), Error);
  }

  TEST_CASE("classes at target get no inserts") {
    std::map<int, int> all;
    for (int c = 1; c <= 18; ++c) all[c] = 2;
    StubSynthesizer provider;
    auto p = plan_synthetic_supplement(with_counts(all), provider, 1);
    for (int c = 1; c <= 18; ++c) CHECK(inserts(p, c) == 0);
  }

  TEST_CASE("a provider missing a class is an error") {
    auto dir = testing::temp_dir("partial_inventory");
    std::vector<Band> nir{Band::nir};
    write_stub_inventory(dir, nir, 1, 1);
    auto inv = load_inventory(dir);
    auto u = with_counts({{1, 2}});
    SupplementOptions rgb;
    rgb.bands = {Band::rgb};
    CHECK_THROWS_AS(plan_synthetic_supplement(u, inv, 1, rgb), Error);
    CHECK_NOTHROW(plan_synthetic_supplement(u, inv, 1));
  }

  TEST_CASE("plans are deterministic and serialize losslessly") {
    auto u = with_counts({{1, 7}, {4, 2}, {12, 3}});
    StubSynthesizer provider;
    auto a = plan_synthetic_supplement(u, provider, 11);
    auto b = plan_synthetic_supplement(u, provider, 11);
    CHECK(balancing_plan_to_json(a) == balancing_plan_to_json(b));
    CHECK(balancing_plan_to_json(plan_real_upsampling(u, 2)) == balancing_plan_to_json(plan_real_upsampling(u, 2)));
    auto dir = testing::temp_dir("balance_json");
    save_balancing_plan(a, dir / "plan.json");
    auto back = load_balancing_plan(dir / "plan.json");
    CHECK(balancing_plan_to_json(back) == balancing_plan_to_json(a));
    CHECK(back.classes == a.classes);
    CHECK(back.fingerprint == fingerprint_units(u));
  }

  TEST_CASE("strategy names") {
    CHECK(parse_strategy("none") == BalancingStrategy::none);
    CHECK(parse_strategy("S3-real") == BalancingStrategy::real_upsample);
    CHECK(parse_strategy("synthetic") == BalancingStrategy::synthetic_supplement);
    CHECK_THROWS_AS(parse_strategy("smote"), Error);
  }
}
