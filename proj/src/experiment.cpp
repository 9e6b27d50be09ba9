#include "syp/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "syp/plot.hpp"
#include "syp/util.hpp"

namespace syp {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string hex64(uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void atomic_write_text(const std::filesystem::path& path, const std::string& body) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError(str("cannot open ", tmp.string()));
    out << body;
  }
  std::filesystem::rename(tmp, path);
}

void validate_or_throw(const ExperimentConfig& cfg) {
  auto bad = cfg.validate();
  if (bad.empty()) return;
  std::string msg = "invalid config:";
  for (const auto& b : bad) msg += "\n  - " + b;
  throw InputError(msg);
}

}  // namespace

std::filesystem::path RunContext::default_cache_dir() {
  if (const char* env = std::getenv("SYP_CACHE_DIR"); env && *env) return env;
  return ".syp-cache";
}

std::shared_ptr<const SynthSplits> RunContext::dataset(const ExperimentConfig& cfg) {
  uint64_t key = cfg.data_key();
  auto it = datasets_.find(key);
  if (it != datasets_.end()) return it->second;
  auto splits = std::make_shared<SynthSplits>(synth_dataset(cfg.synth_spec(), cfg.data_seed));
  datasets_[key] = splits;
  return splits;
}

std::shared_ptr<const BackboneBundle> RunContext::backbone(const ExperimentConfig& cfg,
                                                           bool* cache_hit,
                                                           std::filesystem::path* path_out) {
  uint64_t key = cfg.backbone_key();
  std::filesystem::path path = cache_dir_ / str("backbone_", hex64(key), ".ckpt");
  if (path_out) *path_out = path;
  auto it = backbones_.find(key);
  if (it != backbones_.end()) {
    if (cache_hit) *cache_hit = true;
    return it->second;
  }
  std::shared_ptr<BackboneBundle> bundle;
  if (std::filesystem::exists(path)) {
    bundle = std::make_shared<BackboneBundle>(BackboneBundle::from_container(WeightContainer::load(path)));
    if (cache_hit) *cache_hit = true;
  } else {
    auto splits = dataset(cfg);
    bundle = std::make_shared<BackboneBundle>(pretrain_backbone(cfg, splits->train));
    std::filesystem::create_directories(cache_dir_);
    bundle->to_container().save(path);
    if (cache_hit) *cache_hit = false;
  }
  backbones_[key] = bundle;
  return bundle;
}

std::shared_ptr<FeatureCache> RunContext::features(const ExperimentConfig& cfg) {
  auto key = std::make_pair(cfg.data_key(), cfg.backbone_key());
  auto it = features_.find(key);
  if (it != features_.end()) return it->second;
  auto cache = std::make_shared<FeatureCache>();
  features_[key] = cache;
  return cache;
}

RunArtifacts run_experiment(const ExperimentConfig& cfg, RunContext& ctx, bool write_artifacts) {
  validate_or_throw(cfg);

  RunArtifacts art;
  art.out_dir = cfg.out_dir;

  auto splits = ctx.dataset(cfg);
  art.dataset_train_checksum = dataset_checksum(splits->train);
  art.dataset_val_checksum = dataset_checksum(splits->val);
  art.dataset_test_checksum = dataset_checksum(splits->test);

  auto backbone = ctx.backbone(cfg, &art.backbone_cache_hit, &art.backbone_path);
  art.backbone_checksum = backbone->checksum();

  MissingPattern train_pattern =
      generate_pattern(cfg.n_train, cfg.eta_train, cfg.kind_train, cfg.pattern_seed_train);
  MissingPattern val_pattern =
      generate_pattern(cfg.n_val, cfg.eta_test, cfg.kind_test, cfg.pattern_seed_val);
  MissingPattern test_pattern =
      generate_pattern(cfg.n_test, cfg.eta_test, cfg.kind_test, cfg.pattern_seed_test);

  auto features = ctx.features(cfg);
  PromptModel model = PromptModel::init(cfg, cfg.train_seed);
  TrainResult tr = train_prompts(cfg, *backbone, model, splits->train, train_pattern, splits->val,
                                 val_pattern, *features);
  features->precompute(splits->test, test_pattern, *backbone, cfg.threads);
  double test_metric = evaluate_model(cfg, *backbone, model, splits->test, test_pattern,
                                      features.get());

  art.val_metric = tr.best_val;
  art.best_epoch = tr.best_epoch;
  art.test_metric = test_metric;
  art.log = tr.log;
  art.prompts_checksum = model.checksum();

  std::string csv = "epoch,train_loss,val_metric,lr\n";
  for (const auto& row : tr.log)
    csv += str(row.epoch, ",", fmt(row.train_loss), ",", fmt(row.val_metric), ",", fmt(row.lr), "\n");
  art.metrics_csv_checksum = fnv1a(csv.data(), csv.size());

  if (write_artifacts) {
    std::filesystem::create_directories(art.out_dir);
    cfg.save(art.out_dir / "config.txt");
    atomic_write_text(art.out_dir / "metrics.csv", csv);
    model.to_container().save(art.out_dir / "prompts.ckpt");

    std::string result_csv =
        "variant,task,eta_train,eta_test,kind_train,kind_test,train_seed,best_epoch,val_metric,test_metric\n";
    result_csv += str(to_string(cfg.variant), ",", to_string(cfg.task), ",", fmt(cfg.eta_train), ",",
                      fmt(cfg.eta_test), ",", to_string(cfg.kind_train), ",", to_string(cfg.kind_test),
                      ",", cfg.train_seed, ",", tr.best_epoch, ",", fmt(tr.best_val), ",",
                      fmt(test_metric), "\n");
    atomic_write_text(art.out_dir / "result.csv", result_csv);

    nlohmann::json manifest;
    manifest["seeds"] = {{"data", cfg.data_seed},
                         {"backbone", cfg.backbone_seed},
                         {"train", cfg.train_seed},
                         {"pattern_train", cfg.pattern_seed_train},
                         {"pattern_val", cfg.pattern_seed_val},
                         {"pattern_test", cfg.pattern_seed_test}};
    manifest["checksums"] = {{"dataset_train", hex64(art.dataset_train_checksum)},
                             {"dataset_val", hex64(art.dataset_val_checksum)},
                             {"dataset_test", hex64(art.dataset_test_checksum)},
                             {"backbone", hex64(art.backbone_checksum)},
                             {"prompts_best", hex64(art.prompts_checksum)},
                             {"metrics_csv", hex64(art.metrics_csv_checksum)}};
    manifest["cache"] = {{"backbone_hit", art.backbone_cache_hit},
                         {"backbone_path", art.backbone_path.string()},
                         {"backbone_regenerated", !art.backbone_cache_hit}};
    manifest["result"] = {{"val_metric", tr.best_val},
                          {"test_metric", test_metric},
                          {"best_epoch", tr.best_epoch}};
    manifest["config_file"] = "config.txt";
    atomic_write_text(art.out_dir / "manifest.json", manifest.dump(2) + "\n");
  }
  return art;
}

namespace {

struct CellSpec {
  std::vector<std::pair<std::string, std::string>> coords;
  ExperimentConfig cfg;
};

std::vector<CellSpec> make_cells(const ExperimentConfig& base, const std::string& axis,
                                 const std::vector<std::string>& values,
                                 std::vector<std::string>* columns) {
  std::vector<CellSpec> cells;
  if (axis == "variant") {
    *columns = {"variant"};
    for (const auto& v : values) {
      CellSpec c{{{"variant", v}}, base};
      c.cfg.variant = variant_from_string(v);
      cells.push_back(std::move(c));
    }
  } else if (axis == "r") {
    *columns = {"r"};
    for (const auto& v : values) {
      CellSpec c{{{"r", v}}, base};
      c.cfg.reduction_r = std::stod(v);
      cells.push_back(std::move(c));
    }
  } else if (axis == "adapter") {
    *columns = {"adapter"};
    for (const auto& v : values) {
      if (v != "on" && v != "off")
        throw InputError(str("sweep: adapter axis takes on|off, got '", v, "'"));
      CellSpec c{{{"adapter", v}}, base};
      c.cfg.adapter_enabled = v == "on";
      cells.push_back(std::move(c));
    }
  } else if (axis == "eta") {
    *columns = {"eta_train", "eta_test"};
    for (const auto& tr : values) {
      for (const auto& te : values) {
        CellSpec c{{{"eta_train", tr}, {"eta_test", te}}, base};
        c.cfg.eta_train = std::stod(tr);
        c.cfg.eta_test = std::stod(te);
        cells.push_back(std::move(c));
      }
    }
  } else {
    throw InputError(str("sweep: unknown axis '", axis, "' (variant|r|adapter|eta)"));
  }
  return cells;
}

std::string cell_slug(const CellSpec& c) {
  std::string s;
  for (const auto& [k, v] : c.coords) {
    if (!s.empty()) s += "_";
    s += k + "-" + v;
  }
  for (char& ch : s)
    if (ch == '.') ch = 'p';
  return s;
}

}  // namespace

SweepResult sweep(const ExperimentConfig& base, const std::string& axis,
                  const std::vector<std::string>& values, RunContext& ctx) {
  validate_or_throw(base);
  if (values.empty()) throw InputError("sweep: no axis values");

  SweepResult result;
  result.axis = axis;
  std::vector<CellSpec> cells = make_cells(base, axis, values, &result.columns);

  std::filesystem::path out_root = base.out_dir;
  std::filesystem::create_directories(out_root);

  std::string raw_csv;
  for (const auto& col : result.columns) raw_csv += col + ",";
  raw_csv += "seed,val_metric,test_metric\n";

  for (auto& cell : cells) {
    SweepCell out_cell;
    out_cell.coords = cell.coords;
    for (uint64_t seed : base.seeds) {
      ExperimentConfig cfg = cell.cfg;
      apply_eval_seed(cfg, seed);
      cfg.out_dir = (out_root / "cells" / cell_slug(cell) / str("seed_", seed)).string();
      RunArtifacts art = run_experiment(cfg, ctx, true);
      out_cell.per_seed.push_back(art.test_metric);
      for (const auto& [k, v] : cell.coords) raw_csv += v + ",";
      raw_csv += str(seed, ",", fmt(art.val_metric), ",", fmt(art.test_metric), "\n");
    }
    double mean = 0.0;
    for (double m : out_cell.per_seed) mean += m;
    mean /= static_cast<double>(out_cell.per_seed.size());
    double var = 0.0;
    for (double m : out_cell.per_seed) var += (m - mean) * (m - mean);
    out_cell.mean = mean;
    out_cell.stddev = out_cell.per_seed.size() > 1
                          ? std::sqrt(var / static_cast<double>(out_cell.per_seed.size() - 1))
                          : 0.0;
    result.cells.push_back(std::move(out_cell));
  }

  std::string summary_csv;
  for (const auto& col : result.columns) summary_csv += col + ",";
  summary_csv += "n_seeds,metric_mean,metric_std\n";
  for (const auto& cell : result.cells) {
    for (const auto& [k, v] : cell.coords) summary_csv += v + ",";
    summary_csv += str(cell.per_seed.size(), ",", fmt(cell.mean), ",", fmt(cell.stddev), "\n");
  }

  result.raw_csv = out_root / str("sweep_", axis, "_raw.csv");
  result.summary_csv = out_root / str("sweep_", axis, "_summary.csv");
  atomic_write_text(result.raw_csv, raw_csv);
  atomic_write_text(result.summary_csv, summary_csv);

  nlohmann::json meta;
  meta["axis"] = axis;
  meta["values"] = values;
  meta["kind_train"] = to_string(base.kind_train);
  meta["kind_test"] = to_string(base.kind_test);
  meta["task"] = to_string(base.task);
  atomic_write_text(out_root / str("sweep_", axis, "_meta.json"), meta.dump(2) + "\n");

  if (axis == "eta") {
    size_t k = values.size();
    std::vector<std::vector<double>> grid(k, std::vector<double>(k, 0.0));
    for (size_t i = 0; i < k; ++i)
      for (size_t j = 0; j < k; ++j) grid[i][j] = result.cells[i * k + j].mean;
    std::filesystem::path heat = out_root / str("sweep_eta_heatmap_", to_string(base.kind_test), ".svg");
    plot::write_heatmap(heat, str("metric by missing rate (", to_string(base.kind_test), " missing)"),
                        "test eta", "train eta", values, values, grid);
    result.plots.push_back(heat);

    std::vector<plot::Series> series;
    for (size_t i = 0; i < k; ++i) {
      plot::Series s;
      s.label = "train eta " + values[i];
      for (size_t j = 0; j < k; ++j) {
        s.x.push_back(std::stod(values[j]));
        s.y.push_back(grid[i][j]);
      }
      series.push_back(std::move(s));
    }
    std::filesystem::path lines = out_root / str("sweep_eta_lines_", to_string(base.kind_test), ".svg");
    plot::write_line_chart(lines, str("metric vs test eta (", to_string(base.kind_test), " missing)"),
                           "test eta", "metric", series);
    result.plots.push_back(lines);
  } else if (axis == "r") {
    plot::Series s;
    s.label = "mean metric";
    for (size_t i = 0; i < result.cells.size(); ++i) {
      s.x.push_back(std::stod(values[i]));
      s.y.push_back(result.cells[i].mean);
    }
    std::filesystem::path lines = out_root / "sweep_r_lines.svg";
    plot::write_line_chart(lines, "metric vs reduction ratio", "r", "metric", {s});
    result.plots.push_back(lines);
  }
  return result;
}

std::string report_sweep(const std::filesystem::path& sweep_dir) {
  // Finds the summary CSVs and renders an aligned text table per axis.
  std::ostringstream out;
  bool found = false;
  for (const auto& entry : std::filesystem::directory_iterator(sweep_dir)) {
    std::string name = entry.path().filename().string();
    if (name.rfind("sweep_", 0) != 0 || name.find("_summary.csv") == std::string::npos) continue;
    found = true;
    std::ifstream in(entry.path());
    if (!in) throw InputError(str("report: cannot open ", entry.path().string()));
    out << "== " << name << " ==\n";
    std::string line;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cols;
      size_t pos = 0;
      while (true) {
        size_t comma = line.find(',', pos);
        cols.push_back(line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
      rows.push_back(std::move(cols));
    }
    std::vector<size_t> widths;
    for (const auto& row : rows)
      for (size_t c = 0; c < row.size(); ++c) {
        if (widths.size() <= c) widths.push_back(0);
        widths[c] = std::max(widths[c], row[c].size());
      }
    for (const auto& row : rows) {
      for (size_t c = 0; c < row.size(); ++c) {
        out << row[c];
        for (size_t pad = row[c].size(); pad < widths[c] + 2; ++pad) out << ' ';
      }
      out << "\n";
    }
    out << "\n";
  }
  if (!found) throw InputError(str("report: no sweep summary CSV under ", sweep_dir.string()));
  return out.str();
}

}  // namespace syp
