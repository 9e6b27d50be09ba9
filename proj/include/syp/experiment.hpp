#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "syp/backbone.hpp"
#include "syp/config.hpp"
#include "syp/prompts.hpp"
#include "syp/train.hpp"

namespace syp {

// Shared state across runs: in-memory dataset/backbone/feature reuse plus
// the on-disk backbone cache keyed by config hash.
class RunContext {
 public:
  explicit RunContext(std::filesystem::path cache_dir) : cache_dir_(std::move(cache_dir)) {}

  // SYP_CACHE_DIR when set, else ".syp-cache".
  static std::filesystem::path default_cache_dir();

  std::shared_ptr<const SynthSplits> dataset(const ExperimentConfig& cfg);
  std::shared_ptr<const BackboneBundle> backbone(const ExperimentConfig& cfg, bool* cache_hit,
                                                 std::filesystem::path* path);
  std::shared_ptr<FeatureCache> features(const ExperimentConfig& cfg);

  const std::filesystem::path& cache_dir() const { return cache_dir_; }

 private:
  std::filesystem::path cache_dir_;
  std::map<uint64_t, std::shared_ptr<const SynthSplits>> datasets_;
  std::map<uint64_t, std::shared_ptr<const BackboneBundle>> backbones_;
  std::map<std::pair<uint64_t, uint64_t>, std::shared_ptr<FeatureCache>> features_;
};

struct RunArtifacts {
  double val_metric = 0.0;
  double test_metric = 0.0;
  int best_epoch = -1;
  std::vector<EpochRow> log;
  uint64_t dataset_train_checksum = 0, dataset_val_checksum = 0, dataset_test_checksum = 0;
  uint64_t backbone_checksum = 0;
  uint64_t prompts_checksum = 0;
  uint64_t metrics_csv_checksum = 0;
  bool backbone_cache_hit = false;
  std::filesystem::path backbone_path;
  std::filesystem::path out_dir;
};

// Full pipeline: synth data -> cached backbone -> patterns -> prompt tuning
// -> test metrics. With write_artifacts, emits config snapshot, metrics CSV,
// prompt checkpoint, and a run manifest under cfg.out_dir.
RunArtifacts run_experiment(const ExperimentConfig& cfg, RunContext& ctx, bool write_artifacts);

struct SweepCell {
  std::vector<std::pair<std::string, std::string>> coords;  // axis column -> value
  std::vector<double> per_seed;
  double mean = 0.0;
  double stddev = 0.0;
};

struct SweepResult {
  std::string axis;
  std::vector<std::string> columns;
  std::vector<SweepCell> cells;
  std::filesystem::path raw_csv, summary_csv;
  std::vector<std::filesystem::path> plots;
};

// Axes: "variant" (variant names), "r" (reduction ratios), "adapter"
// (on|off), "eta" (rates forming the train x test grid). Cells share the
// backbone and dataset whenever their configs agree; each cell reports
// mean and standard deviation over cfg.seeds.
SweepResult sweep(const ExperimentConfig& base, const std::string& axis,
                  const std::vector<std::string>& values, RunContext& ctx);

// Re-renders plots and returns a printable table from a sweep directory.
std::string report_sweep(const std::filesystem::path& sweep_dir);

}  // namespace syp
