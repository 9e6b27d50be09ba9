#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "syp/data.hpp"
#include "syp/metrics.hpp"

namespace syp {

// Which prompt paths a model trains and evaluates.
enum class Variant : uint8_t { Synergistic, DynamicOnly, StaticOnly, NoPrompt };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);
const char* to_string(TaskKind t);
TaskKind task_from_string(const std::string& s);

// Every knob of one experiment, serializable as a flat key = value file.
// Defaults are desk-scale: a full prompt-tuning run takes well under a
// minute of CPU, while the paper-scale values remain expressible.
struct ExperimentConfig {
  // model dims
  int d = 32;            // embedding width, both streams
  int heads = 4;
  int layers = 4;
  int t_img = 16;        // image tokens per sample
  int t_txt = 16;        // max text tokens per sample
  int vocab_img = 100;
  int vocab_txt = 100;
  int patch_dim = 16;    // synthetic patch codebook width

  // prompts
  int prompt_len = 4;            // L_p
  int prompt_depth = 4;          // M prompted layers, starting at layer 1
  int d_static = 32;             // static prompt width d_s
  int bottleneck_ratio = 4;      // propagator d -> d/ratio -> d
  double reduction_r = 5.0;      // adapter reduction ratio
  bool adapter_scale_inv_r = true;   // apply the literal 1/r pre-activation factor
  int adapter_hidden_override = 0;   // 0: h = round(2d / r)
  bool adapter_enabled = true;       // false pins the scaling factor to all-ones
  double prompt_init_std = 0.02;
  double static_proj_noise = 0.01;   // projections start at identity + noise
  Variant variant = Variant::Synergistic;

  // task + data
  TaskKind task = TaskKind::Multiclass;
  int n_classes = 20;
  double alpha_img = 0.75;
  double alpha_txt = 0.75;
  int n_train = 2000;
  int n_val = 500;
  int n_test = 500;
  uint64_t data_seed = 7;

  // missing pattern
  double eta_train = 0.5;
  double eta_test = 0.5;
  MissingKind kind_train = MissingKind::Both;
  MissingKind kind_test = MissingKind::Both;
  uint64_t pattern_seed_train = 101;
  uint64_t pattern_seed_val = 202;
  uint64_t pattern_seed_test = 303;

  // prompt tuning
  double lr = 1e-3;
  double weight_decay = 2e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 20;
  int batch_size = 32;
  double warmup_frac = 0.1;
  uint64_t train_seed = 17;

  // backbone pretraining
  int pretrain_steps = 300;
  double pretrain_lr = 3e-3;
  double pretrain_weight_decay = 1e-4;
  int pretrain_batch = 32;
  uint64_t backbone_seed = 42;

  // evaluation + sweeps
  double multilabel_threshold = 0.5;
  std::vector<uint64_t> seeds = {11, 13, 17, 19, 23};  // sweep evaluation seeds
  std::string out_dir = "out";
  int threads = 0;  // 0: library default

  // Serialization round-trips losslessly: parse(to_string(c)) == c.
  std::string to_flat_string() const;
  static ExperimentConfig from_flat_string(const std::string& text);
  static ExperimentConfig from_file(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Empty when valid, otherwise one line per violated field.
  std::vector<std::string> validate() const;

  // Hash over the fields the pretrained backbone depends on.
  uint64_t backbone_key() const;
  // Hash over the fields the synthetic dataset depends on.
  uint64_t data_key() const;

  SynthSpec synth_spec() const;
  int label_width() const { return task == TaskKind::Binary ? 1 : n_classes; }

  bool operator==(const ExperimentConfig&) const = default;
};

// Rewires the per-run seeds from one evaluation seed; dataset and backbone
// seeds stay put so sweeps share them.
void apply_eval_seed(ExperimentConfig& cfg, uint64_t seed);

}  // namespace syp
