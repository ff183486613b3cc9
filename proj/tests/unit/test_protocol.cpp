#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "helpers.hpp"
#include "pmi/protocol.hpp"

using namespace pmi;

namespace {

std::vector<SplitUnit> units(int n, int subjects = 0, const std::string& dataset = "d") {
  std::vector<SplitUnit> out;
  for (int i = 0; i < n; ++i)
    out.push_back({"u" + std::to_string(i), "s" + std::to_string(subjects ? i % subjects : i), dataset, 1.0 * i});
  return out;
}

std::vector<std::size_t> test_sizes(const SplitPlan& plan) {
  std::vector<std::size_t> s;
  for (const auto& f : plan.folds) s.push_back(f.test_ids.size());
  std::sort(s.begin(), s.end());
  return s;
}

}  // namespace

TEST_SUITE("protocol") {
  TEST_CASE("S1 fold sizes") {
    auto ten = make_sample_disjoint_folds(units(10), 10, 1);
    CHECK(test_sizes(ten) == std::vector<std::size_t>(10, 1));
    // 23 = 7 * 2 + 3 * 3.
    auto p = make_sample_disjoint_folds(units(23), 10, 1);
    std::vector<std::size_t> want{2, 2, 2, 2, 2, 2, 2, 3, 3, 3};
    CHECK(test_sizes(p) == want);
    CHECK(verify_split(p, units(23)).passed());
    CHECK_THROWS_AS(make_sample_disjoint_folds(units(5), 6, 1), Error);
    CHECK_THROWS_AS(make_sample_disjoint_folds(units(5), 1, 1), Error);
  }

  TEST_CASE("S1 determinism and seed sensitivity") {
    auto u = units(40);
    CHECK(split_plan_to_json(make_sample_disjoint_folds(u, 10, 5)) == split_plan_to_json(make_sample_disjoint_folds(u, 10, 5)));
    std::set<std::string> distinct;
    for (int seed = 0; seed < 20; ++seed) distinct.insert(split_plan_to_json(make_sample_disjoint_folds(u, 10, seed)));
    CHECK(distinct.size() == 20);
  }

  TEST_CASE("S2 greedy packing: subject sizes {8,1,1} into two folds") {
    std::vector<SplitUnit> u;
    for (int i = 0; i < 8; ++i) u.push_back({"a" + std::to_string(i), "big", "d", 1});
    u.push_back({"b0", "small1", "d", 1});
    u.push_back({"c0", "small2", "d", 1});
    auto p = make_subject_disjoint_folds(u, 2, 3);
    CHECK(test_sizes(p) == std::vector<std::size_t>{2, 8});
    CHECK(verify_split(p, u).passed());
  }

  TEST_CASE("S2 one subject per fold and subject disjointness") {
    auto u = units(30, 10);
    auto p = make_subject_disjoint_folds(u, 10, 2);
    std::map<std::string, std::string> subject;
    for (const auto& x : u) subject[x.id] = x.subject_id;
    for (const auto& f : p.folds) {
      std::set<std::string> test_subjects, train_subjects;
      for (const auto& id : f.test_ids) test_subjects.insert(subject[id]);
      for (const auto& id : f.train_ids) train_subjects.insert(subject[id]);
      CHECK(test_subjects.size() == 1);
      for (const auto& s : test_subjects) CHECK(train_subjects.count(s) == 0);
    }
    CHECK_THROWS_AS(make_subject_disjoint_folds(u, 11, 2), Error);
  }

  TEST_CASE("S3 cross-dataset split") {
    auto u = units(6, 3, "warsaw");
    auto v = units(4, 2, "nij");
    for (auto& x : v) x.id = "n" + x.id, x.subject_id = "n" + x.subject_id;
    u.insert(u.end(), v.begin(), v.end());
    auto p = make_cross_dataset_split(u, "nij", "warsaw");
    REQUIRE(p.folds.size() == 1);
    CHECK(p.folds[0].train_ids.size() == 4);
    CHECK(p.folds[0].test_ids.size() == 6);
    CHECK(p.train_dataset == "nij");
    CHECK(verify_split(p, u).passed());
    CHECK_THROWS_AS(make_cross_dataset_split(u, "nij", "nij"), Error);
    CHECK_THROWS_AS(make_cross_dataset_split(u, "nij", "elsewhere"), Error);
  }

  TEST_CASE("audit catches a leaked subject and names it") {
    auto u = units(20, 5);
    auto p = make_subject_disjoint_folds(u, 5, 1);
    auto& f = p.folds[0];
    // Move one test sample to the training side: its subject is now on both.
    std::string moved = f.test_ids.back();
    f.test_ids.pop_back();
    f.train_ids.push_back(moved);
    std::sort(f.train_ids.begin(), f.train_ids.end());
    auto a = verify_split(p, u);
    CHECK_FALSE(a.passed());
    const auto* c = a.find("subject_disjoint");
    REQUIRE(c);
    CHECK_FALSE(c->passed);
    std::string subject;
    for (const auto& x : u)
      if (x.id == moved) subject = x.subject_id;
    CHECK(std::find(c->counterexamples.begin(), c->counterexamples.end(), subject) != c->counterexamples.end());
  }

  TEST_CASE("audit catches a sample missing from all test sets") {
    auto u = units(12);
    auto p = make_sample_disjoint_folds(u, 3, 1);
    p.folds[1].test_ids.erase(p.folds[1].test_ids.begin());
    auto a = verify_split(p, u);
    CHECK_FALSE(a.find("test_partition")->passed);
  }

  TEST_CASE("fingerprint drift is an error") {
    auto u = units(12);
    auto p = make_sample_disjoint_folds(u, 3, 1);
    u[0].pmi_hours += 1;
    CHECK_THROWS_AS(verify_split(p, u), Error);
  }

  TEST_CASE("split plans serialize losslessly") {
    auto u = units(17, 6);
    auto p = make_subject_disjoint_folds(u, 4, 9);
    auto dir = testing::temp_dir("split_json");
    save_split_plan(p, dir / "split.json");
    auto back = load_split_plan(dir / "split.json");
    CHECK(split_plan_to_json(back) == split_plan_to_json(p));
    CHECK(back.folds.size() == 4);
    CHECK(back.scenario == Scenario::s2_subject_disjoint);
    CHECK(verify_split(back, u).passed());
  }

  TEST_CASE("scenario names") {
    CHECK(parse_scenario("S1") == Scenario::s1_sample_disjoint);
    CHECK(parse_scenario("s2") == Scenario::s2_subject_disjoint);
    CHECK(parse_scenario("S3_cross_dataset") == Scenario::s3_cross_dataset);
    CHECK_THROWS_AS(parse_scenario("S4"), Error);
  }
}
