#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "helpers.hpp"
#include "pmi/evaluate.hpp"

using namespace pmi;
using nlohmann::json;

namespace {

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::vector<double> random_vector(Rng& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.uniform();
  return v;
}

}  // namespace

TEST_SUITE("evaluate") {
  TEST_CASE("metric examples") {
    std::vector<double> p{0, 0}, t{3, 4};
    CHECK(rmse(p, t) == std::sqrt(12.5));
    CHECK(mae(p, t) == 3.5);
    std::vector<double> same{1, 2, 3};
    CHECK(rmse(same, same) == 0.0);
    CHECK(mae(same, same) == 0.0);
  }

  TEST_CASE("metric preconditions") {
    std::vector<double> a{1, 2}, b{1}, empty;
    CHECK_THROWS_AS(rmse(a, b), Error);
    CHECK_THROWS_AS(mae(empty, empty), Error);
    std::vector<double> nan{1, std::nan("")};
    CHECK_THROWS_AS(rmse(nan, a), Error);
    CHECK_THROWS_AS(mae(a, nan), Error);
  }

  TEST_CASE("metrics agree with an extended-precision oracle and are invariant") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 1 + rng.index(300);
      auto p = random_vector(rng, n, 1700), t = random_vector(rng, n, 1700);
      long double sq = 0, ab = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const long double d = static_cast<long double>(p[i]) - t[i];
        sq += d * d;
        ab += d < 0 ? -d : d;
      }
      const double r = rmse(p, t), m = mae(p, t);
      CHECK(r == doctest::Approx(static_cast<double>(std::sqrt(sq / n))).epsilon(1e-12));
      CHECK(m == doctest::Approx(static_cast<double>(ab / n)).epsilon(1e-12));
      CHECK(m <= r * (1 + 1e-12));
      CHECK(r <= m * std::sqrt(static_cast<double>(n)) * (1 + 1e-12));

      std::vector<std::size_t> order(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      rng.shuffle(order.begin(), order.end());
      std::vector<double> pp(n), tt(n), ps(n), ts(n);
      for (std::size_t i = 0; i < n; ++i) {
        pp[i] = p[order[i]];
        tt[i] = t[order[i]];
        ps[i] = p[i] + 250.0;
        ts[i] = t[i] + 250.0;
      }
      CHECK(rmse(pp, tt) == doctest::Approx(r).epsilon(1e-12));
      CHECK(mae(pp, tt) == doctest::Approx(m).epsilon(1e-12));
      CHECK(rmse(ps, ts) == doctest::Approx(r).epsilon(1e-9));
      CHECK(mae(ps, ts) == doctest::Approx(m).epsilon(1e-9));
    }
  }

  TEST_CASE("fold metrics from predictions") {
    std::vector<Prediction> preds{{"a", 0, 3}, {"b", 0, 4}};
    auto f = fold_metrics(preds);
    CHECK(f.n == 2);
    CHECK(f.rmse == std::sqrt(12.5));
    CHECK(f.mae == 3.5);
  }

  TEST_CASE("cross-fold summary") {
    std::vector<FoldMetrics> two{{6, 1, 5}, {8, 3, 5}};
    auto s = cross_fold_summary(two);
    CHECK(s.rmse.mean == 7.0);
    CHECK(s.rmse.stdev == doctest::Approx(std::sqrt(2.0)));
    CHECK(s.mae.mean == 2.0);
    std::vector<FoldMetrics> one{{4, 2, 9}};
    CHECK(cross_fold_summary(one).rmse.stdev == 0.0);
    CHECK_THROWS_AS(cross_fold_summary(std::span<const FoldMetrics>{}), Error);

    Rng rng(3);
    std::vector<FoldMetrics> ten;
    for (int i = 0; i < 10; ++i) ten.push_back({100 * rng.uniform(), 50 * rng.uniform(), 10});
    double mean = 0;
    for (const auto& f : ten) mean += f.rmse;
    mean /= 10;
    double ss = 0;
    for (const auto& f : ten) ss += (f.rmse - mean) * (f.rmse - mean);
    auto t = cross_fold_summary(ten);
    CHECK(t.rmse.mean == doctest::Approx(mean).epsilon(1e-14));
    CHECK(t.rmse.stdev == doctest::Approx(std::sqrt(ss / 9)).epsilon(1e-12));
  }

  TEST_CASE("metrics report JSON") {
    auto r = make_metrics_report("S2", "NIR", "toy_cnn", "none", {{6, 1, 5}, {8, 3, 4}});
    CHECK(r.summary.rmse.mean == 7.0);
    auto j = json::parse(r.to_json());
    CHECK(j["mean_rmse"] == 7.0);
    CHECK(j["folds"].size() == 2);
    auto back = MetricsReport::from_json(r.to_json());
    CHECK(back.folds == r.folds);
    CHECK(back.to_json() == r.to_json());
    auto dir = testing::temp_dir("metrics_report");
    save_metrics_report(r, dir / "metrics.json");
    CHECK(load_metrics_report(dir / "metrics.json").to_json() == r.to_json());
  }

  TEST_CASE("scatter sidecar lists every point") {
    auto dir = testing::temp_dir("scatter");
    std::vector<Prediction> preds{{"a", 10, 12}, {"b", 300, 250}, {"c", 40.5, 41}};
    auto files = scatter_report(preds, dir / "scatter");
    CHECK(std::filesystem::exists(files.png));
    CHECK(std::filesystem::exists(files.svg));
    auto j = read_json(files.sidecar);
    CHECK(j["kind"] == "scatter");
    REQUIRE(j["points"].size() == 3);
    CHECK(j["points"][1]["id"] == "b");
    CHECK(j["points"][1]["y_pred"] == 300.0);
    CHECK(j["points"][1]["y_true"] == 250.0);
    CHECK_THROWS_AS(scatter_report(std::span<const Prediction>{}, dir / "none"), Error);
  }

  TEST_CASE("box plot sidecar holds type-7 quartiles") {
    auto dir = testing::temp_dir("boxplot");
    std::vector<BoxGroup> groups{{"train", {1, 2, 3, 4, 5, 6, 100}}, {"test", {5}}};
    auto files = distribution_boxplot(groups, dir / "box");
    CHECK(std::filesystem::exists(files.png));
    auto j = read_json(files.sidecar);
    REQUIRE(j["groups"].size() == 2);
    const auto& g = j["groups"][0];
    CHECK(g["count"] == 7);
    CHECK(g["min"] == 1.0);
    CHECK(g["q1"] == 2.5);
    CHECK(g["median"] == 4.0);
    CHECK(g["q3"] == 5.5);
    CHECK(g["max"] == 100.0);
    CHECK(j["groups"][1]["q1"] == 5.0);
    std::vector<BoxGroup> bad{{"empty", {}}};
    CHECK_THROWS_AS(distribution_boxplot(bad, dir / "bad"), Error);
  }
}
