// Experiment runner: pretrain / run / sweep / eval / report.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "syp/experiment.hpp"
#include "syp/util.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "flat key = value config file");
  cmd->add_option("--out", opts.out_dir, "output directory (overrides out_dir)");
  cmd->add_option("--seed", opts.seed, "evaluation seed (rewires train/pattern seeds)");
}

syp::ExperimentConfig load_config(const CommonOpts& opts) {
  syp::ExperimentConfig cfg;
  if (!opts.config_path.empty()) cfg = syp::ExperimentConfig::from_file(opts.config_path);
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (opts.seed) syp::apply_eval_seed(cfg, *opts.seed);
  auto bad = cfg.validate();
  if (!bad.empty()) {
    std::string msg = "invalid config:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw syp::InputError(msg);
  }
  return cfg;
}

int fail(const char* kind, const std::string& message, int code) {
  nlohmann::json err;
  err["error"] = {{"kind", kind}, {"message", message}};
  std::cerr << err.dump() << "\n";
  return code;
}

std::vector<std::string> split_values(const std::string& csv) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos <= csv.size() && !csv.empty()) {
    size_t comma = csv.find(',', pos);
    out.push_back(csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synergistic prompt tuning for missing-modality classification"};
  app.require_subcommand(1);

  CommonOpts pretrain_opts, run_opts, sweep_opts, eval_opts;
  std::string axis = "variant";
  std::string values_csv;
  std::string eval_checkpoint;
  std::string report_dir;

  CLI::App* cmd_pretrain = app.add_subcommand("pretrain", "build (or refresh) the cached backbone");
  add_common(cmd_pretrain, pretrain_opts);

  CLI::App* cmd_run = app.add_subcommand("run", "single end-to-end experiment");
  add_common(cmd_run, run_opts);

  CLI::App* cmd_sweep = app.add_subcommand("sweep", "cross-product of one axis and the seed list");
  add_common(cmd_sweep, sweep_opts);
  cmd_sweep->add_option("--axis", axis, "variant | r | adapter | eta")->required();
  cmd_sweep->add_option("--values", values_csv, "comma-separated axis values")->required();

  CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a prompt checkpoint on the test split");
  add_common(cmd_eval, eval_opts);
  cmd_eval->add_option("--checkpoint", eval_checkpoint, "prompts.ckpt path")->required();

  CLI::App* cmd_report = app.add_subcommand("report", "print tables for a sweep directory");
  cmd_report->add_option("--dir", report_dir, "sweep output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    return fail("usage", e.what(), 2);
  }

  try {
    syp::RunContext ctx(syp::RunContext::default_cache_dir());

    if (cmd_pretrain->parsed()) {
      auto cfg = load_config(pretrain_opts);
      bool hit = false;
      std::filesystem::path path;
      auto backbone = ctx.backbone(cfg, &hit, &path);
      std::printf("backbone %s (%s)\n", path.string().c_str(), hit ? "cache hit" : "pretrained");
      std::printf("checksum %016llx  pretrain loss %.6g -> %.6g\n",
                  static_cast<unsigned long long>(backbone->checksum()),
                  backbone->meta.first_loss, backbone->meta.final_loss);
      return 0;
    }

    if (cmd_run->parsed()) {
      auto cfg = load_config(run_opts);
      auto art = syp::run_experiment(cfg, ctx, true);
      std::printf("run complete: out=%s\n", art.out_dir.string().c_str());
      std::printf("val_metric %.6f  test_metric %.6f  best_epoch %d\n", art.val_metric,
                  art.test_metric, art.best_epoch);
      return 0;
    }

    if (cmd_sweep->parsed()) {
      auto cfg = load_config(sweep_opts);
      auto values = split_values(values_csv);
      auto res = syp::sweep(cfg, axis, values, ctx);
      std::printf("sweep complete: %zu cells\n", res.cells.size());
      std::printf("summary %s\n", res.summary_csv.string().c_str());
      for (const auto& p : res.plots) std::printf("plot %s\n", p.string().c_str());
      return 0;
    }

    if (cmd_eval->parsed()) {
      auto cfg = load_config(eval_opts);
      auto splits = ctx.dataset(cfg);
      auto backbone = ctx.backbone(cfg, nullptr, nullptr);
      syp::PromptModel model = syp::PromptModel::init(cfg, cfg.train_seed);
      model.load_container(syp::WeightContainer::load(eval_checkpoint));
      syp::MissingPattern pattern =
          syp::generate_pattern(cfg.n_test, cfg.eta_test, cfg.kind_test, cfg.pattern_seed_test);
      auto features = ctx.features(cfg);
      features->precompute(splits->test, pattern, *backbone, cfg.threads);
      double metric = syp::evaluate_model(cfg, *backbone, model, splits->test, pattern, features.get());
      std::printf("test_metric %.6f (task %s, variant %s)\n", metric, syp::to_string(cfg.task),
                  syp::to_string(model.variant));
      return 0;
    }

    if (cmd_report->parsed()) {
      std::fputs(syp::report_sweep(report_dir).c_str(), stdout);
      return 0;
    }
  } catch (const syp::InputError& e) {
    return fail("input", e.what(), 2);
  } catch (const syp::ParseError& e) {
    return fail("parse", e.what(), 3);
  } catch (const syp::ContractError& e) {
    return fail("contract", e.what(), 4);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 5);
  }
  return 0;
}
