#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "helpers.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string output;
};

Result pmi_cli(const fs::path& cwd, const std::string& args) {
  const auto log = cwd / "cli.log";
  const std::string cmd = "cd '" + cwd.string() + "' && '" PMI_BIN "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {status, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("validate, split, train, evaluate, report") {
    auto dir = testing::temp_dir("cli_flow");
    auto r = pmi_cli(dir, "--out corpus synth-stub --corpus --datasets a b --subjects 2 --sessions 3 --bands nir");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    REQUIRE(fs::exists(dir / "corpus/manifest.csv"));

    r = pmi_cli(dir, "--manifest corpus/manifest.csv validate");
    CHECK(r.code == 0);
    CHECK(r.output.find("12 records") != std::string::npos);

    const std::string run =
        "--manifest corpus/manifest.csv --scenario S2 -k 2 --backbone toy_cnn --band nir --epochs 1 --batch-size 4 "
        "--seed 5 --out run ";
    r = pmi_cli(dir, run + "split");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(fs::exists(dir / "run/split.json"));
    CHECK(fs::exists(dir / "run/run_config.json"));

    // Later steps read everything else from run/run_config.json.
    r = pmi_cli(dir, "--out run train");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(fs::exists(dir / "run/checkpoints/S2_NIR_toy_cnn_0.ckpt"));
    CHECK(fs::exists(dir / "run/checkpoints/S2_NIR_toy_cnn_1.ckpt"));

    r = pmi_cli(dir, "--out run evaluate");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    const auto metrics = slurp(dir / "run/metrics.json");
    CHECK(metrics.find("\"mean_rmse\"") != std::string::npos);
    CHECK(fs::exists(dir / "run/plots/scatter_all.png"));
    CHECK(fs::exists(dir / "run/plots/distribution_fold1.json"));

    r = pmi_cli(dir, "--out run evaluate");
    REQUIRE(r.code == 0);
    CHECK(slurp(dir / "run/metrics.json") == metrics);

    r = pmi_cli(dir, "--out rep report run");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    const auto md = slurp(dir / "rep/report.md");
    CHECK(md.find("| Backbone | RMSE Mean | RMSE StDev | MAE Mean | MAE StDev |") != std::string::npos);
    CHECK(md.find("| toy_cnn |") != std::string::npos);
    CHECK(fs::exists(dir / "rep/report.csv"));
  }

  TEST_CASE("S3 balancing with stub synthetics") {
    auto dir = testing::temp_dir("cli_s3");
    REQUIRE(pmi_cli(dir, "--out corpus synth-stub --corpus --datasets a b --subjects 2 --sessions 3 --bands nir").code == 0);
    const std::string run =
        "--manifest corpus/manifest.csv --scenario S3 --train-dataset a --test-dataset b "
        "--balancing synthetic_supplement --synthetic stub --out run ";
    auto r = pmi_cli(dir, run + "balance");
    CHECK(r.code != 0);
    CHECK(r.output.find("pmi split") != std::string::npos);
    REQUIRE(pmi_cli(dir, run + "split").code == 0);
    r = pmi_cli(dir, "--out run balance");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(fs::exists(dir / "run/balancing_fold0.json"));
    CHECK(fs::exists(dir / "run/split.json"));
  }

  TEST_CASE("invalid requests exit non-zero with a message") {
    auto dir = testing::temp_dir("cli_errors");
    REQUIRE(pmi_cli(dir, "--out corpus synth-stub --corpus --datasets a b --subjects 2 --sessions 3 --bands nir").code == 0);
    auto r = pmi_cli(dir, "--manifest corpus/manifest.csv --scenario S3 --train-dataset a --test-dataset a --out run split");
    CHECK(r.code != 0);
    CHECK(r.output.find("error:") != std::string::npos);

    r = pmi_cli(dir, "--manifest missing.csv validate");
    CHECK(r.code != 0);
    CHECK(r.output.find("error:") != std::string::npos);

    r = pmi_cli(dir, "--manifest corpus/manifest.csv --scenario S1 --balancing real_upsample --out run2 split");
    CHECK(r.code != 0);

    r = pmi_cli(dir, "--manifest corpus/manifest.csv --backbone alexnet --out run3 split");
    CHECK(r.code != 0);
  }
}
