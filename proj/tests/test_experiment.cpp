#include <doctest.h>

#include <fstream>
#include <sstream>

#include "syp/experiment.hpp"
#include "syp/util.hpp"
#include "test_support.hpp"

using namespace syp;
using test::tiny_config;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("run_experiment: validation rejects bad configs before any compute") {
  test::TempDir dir("exp_validate");
  RunContext ctx(dir.path / "cache");
  auto cfg = tiny_config();
  cfg.prompt_depth = cfg.layers + 2;
  cfg.eta_test = 7.0;
  try {
    run_experiment(cfg, ctx, false);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    std::string msg = e.what();
    CHECK(msg.find("prompt_depth") != std::string::npos);
    CHECK(msg.find("eta_test") != std::string::npos);
  }
}

TEST_CASE("run_experiment: determinism and artifact layout") {
  test::TempDir dir("exp_run");
  auto cfg = tiny_config();
  cfg.out_dir = (dir.path / "run1").string();

  RunArtifacts a1;
  {
    RunContext ctx(dir.path / "cache");
    a1 = run_experiment(cfg, ctx, true);
  }
  CHECK(std::filesystem::exists(a1.out_dir / "config.txt"));
  CHECK(std::filesystem::exists(a1.out_dir / "metrics.csv"));
  CHECK(std::filesystem::exists(a1.out_dir / "prompts.ckpt"));
  CHECK(std::filesystem::exists(a1.out_dir / "manifest.json"));
  CHECK(std::filesystem::exists(a1.out_dir / "result.csv"));
  CHECK_FALSE(a1.backbone_cache_hit);  // first run pretrains

  // identical config + seeds, fresh context (cache on disk persists)
  cfg.out_dir = (dir.path / "run2").string();
  RunArtifacts a2;
  {
    RunContext ctx(dir.path / "cache");
    a2 = run_experiment(cfg, ctx, true);
  }
  CHECK(a2.backbone_cache_hit);
  CHECK(a1.metrics_csv_checksum == a2.metrics_csv_checksum);
  CHECK(a1.prompts_checksum == a2.prompts_checksum);
  CHECK(a1.backbone_checksum == a2.backbone_checksum);
  CHECK(slurp(a1.out_dir / "metrics.csv") == slurp(a2.out_dir / "metrics.csv"));

  // the saved config snapshot reproduces the run (manifest reproducibility)
  auto snap = ExperimentConfig::from_file(a1.out_dir / "config.txt");
  snap.out_dir = (dir.path / "run3").string();
  RunContext ctx3(dir.path / "cache");
  RunArtifacts a3 = run_experiment(snap, ctx3, false);
  CHECK(a3.test_metric == a1.test_metric);
  CHECK(a3.metrics_csv_checksum == a1.metrics_csv_checksum);
}

TEST_CASE("sweep: variant axis emits expected rows and shares data/backbone") {
  test::TempDir dir("exp_sweep");
  auto cfg = tiny_config();
  cfg.epochs = 1;
  cfg.seeds = {11, 13};
  cfg.out_dir = (dir.path / "sweep").string();
  RunContext ctx(dir.path / "cache");

  auto res = sweep(cfg, "variant", {"no_prompt", "static_only", "dynamic_only", "synergistic"}, ctx);
  REQUIRE(res.cells.size() == 4);
  for (const auto& cell : res.cells) CHECK(cell.per_seed.size() == 2);

  std::string summary = slurp(res.summary_csv);
  CHECK(summary.find("variant,n_seeds,metric_mean,metric_std") == 0);
  CHECK(summary.find("synergistic") != std::string::npos);
  std::string raw = slurp(res.raw_csv);
  CHECK(raw.find("no_prompt,11,") != std::string::npos);

  // cells reuse identical backbone and dataset bytes
  uint64_t backbone_sum = 0, data_sum = 0;
  bool first = true;
  for (const auto& entry :
       std::filesystem::recursive_directory_iterator(dir.path / "sweep" / "cells")) {
    if (entry.path().filename() != "manifest.json") continue;
    std::string manifest = slurp(entry.path());
    auto grab = [&](const std::string& key) {
      size_t at = manifest.find(key);
      REQUIRE(at != std::string::npos);
      size_t q = manifest.find('"', at + key.size() + 2);
      size_t q2 = manifest.find('"', q + 1);
      return manifest.substr(q + 1, q2 - q - 1);
    };
    uint64_t b = std::stoull(grab("\"backbone\""), nullptr, 16);
    uint64_t d = std::stoull(grab("\"dataset_train\""), nullptr, 16);
    if (first) {
      backbone_sum = b;
      data_sum = d;
      first = false;
    } else {
      CHECK(b == backbone_sum);
      CHECK(d == data_sum);
    }
  }
  CHECK_FALSE(first);

  std::string table = report_sweep(dir.path / "sweep");
  CHECK(table.find("synergistic") != std::string::npos);
}

TEST_CASE("sweep: eta axis emits a grid with heatmap and line plots") {
  test::TempDir dir("exp_sweep_eta");
  auto cfg = tiny_config();
  cfg.epochs = 1;
  cfg.seeds = {11};
  cfg.variant = Variant::NoPrompt;  // cheapest path; the grid logic is the same
  cfg.out_dir = (dir.path / "sweep").string();
  RunContext ctx(dir.path / "cache");

  auto res = sweep(cfg, "eta", {"0.3", "0.7"}, ctx);
  REQUIRE(res.cells.size() == 4);  // 2x2 grid
  CHECK(res.cells[0].coords[0].first == "eta_train");
  REQUIRE(res.plots.size() == 2);
  for (const auto& p : res.plots) {
    CHECK(std::filesystem::exists(p));
    std::string svg = slurp(p);
    CHECK(svg.find("<svg") != std::string::npos);
  }
}

TEST_CASE("sweep: unknown axis or bad values fail cleanly") {
  test::TempDir dir("exp_sweep_bad");
  auto cfg = tiny_config();
  RunContext ctx(dir.path / "cache");
  CHECK_THROWS_AS(sweep(cfg, "bogus", {"1"}, ctx), InputError);
  CHECK_THROWS_AS(sweep(cfg, "adapter", {"sideways"}, ctx), InputError);
  CHECK_THROWS_AS(sweep(cfg, "variant", {}, ctx), InputError);
}
