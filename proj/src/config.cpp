#include "syp/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "syp/util.hpp"

namespace syp {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::Synergistic: return "synergistic";
    case Variant::DynamicOnly: return "dynamic_only";
    case Variant::StaticOnly: return "static_only";
    case Variant::NoPrompt: return "no_prompt";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "synergistic") return Variant::Synergistic;
  if (s == "dynamic_only") return Variant::DynamicOnly;
  if (s == "static_only") return Variant::StaticOnly;
  if (s == "no_prompt") return Variant::NoPrompt;
  throw InputError(str("unknown variant '", s,
                       "' (expected synergistic|dynamic_only|static_only|no_prompt)"));
}

const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::Multilabel: return "multilabel";
    case TaskKind::Multiclass: return "multiclass";
    case TaskKind::Binary: return "binary";
  }
  return "?";
}

TaskKind task_from_string(const std::string& s) {
  if (s == "multilabel") return TaskKind::Multilabel;
  if (s == "multiclass") return TaskKind::Multiclass;
  if (s == "binary") return TaskKind::Binary;
  throw InputError(str("unknown task '", s, "' (expected multilabel|multiclass|binary)"));
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw InputError(str("config: key '", key, "': bad integer '", v, "'"));
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw InputError(str("config: key '", key, "': bad unsigned integer '", v, "'"));
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw InputError(str("config: key '", key, "': bad number '", v, "'"));
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InputError(str("config: key '", key, "': bad bool '", v, "' (true|false)"));
}

const std::map<std::string, Field>& field_table() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    auto add_int = [&](const std::string& k, int ExperimentConfig::* p) {
      t[k] = {[p](const ExperimentConfig& c) { return str(c.*p); },
              [p, k](ExperimentConfig& c, const std::string& v) { c.*p = parse_int(k, v); }};
    };
    auto add_u64 = [&](const std::string& k, uint64_t ExperimentConfig::* p) {
      t[k] = {[p](const ExperimentConfig& c) { return str(c.*p); },
              [p, k](ExperimentConfig& c, const std::string& v) { c.*p = parse_u64(k, v); }};
    };
    auto add_double = [&](const std::string& k, double ExperimentConfig::* p) {
      t[k] = {[p](const ExperimentConfig& c) { return fmt_double(c.*p); },
              [p, k](ExperimentConfig& c, const std::string& v) { c.*p = parse_double(k, v); }};
    };
    auto add_bool = [&](const std::string& k, bool ExperimentConfig::* p) {
      t[k] = {[p](const ExperimentConfig& c) { return c.*p ? "true" : "false"; },
              [p, k](ExperimentConfig& c, const std::string& v) { c.*p = parse_bool(k, v); }};
    };

    add_int("d", &ExperimentConfig::d);
    add_int("heads", &ExperimentConfig::heads);
    add_int("layers", &ExperimentConfig::layers);
    add_int("t_img", &ExperimentConfig::t_img);
    add_int("t_txt", &ExperimentConfig::t_txt);
    add_int("vocab_img", &ExperimentConfig::vocab_img);
    add_int("vocab_txt", &ExperimentConfig::vocab_txt);
    add_int("patch_dim", &ExperimentConfig::patch_dim);

    add_int("prompt_len", &ExperimentConfig::prompt_len);
    add_int("prompt_depth", &ExperimentConfig::prompt_depth);
    add_int("d_static", &ExperimentConfig::d_static);
    add_int("bottleneck_ratio", &ExperimentConfig::bottleneck_ratio);
    add_double("reduction_r", &ExperimentConfig::reduction_r);
    add_bool("adapter_scale_inv_r", &ExperimentConfig::adapter_scale_inv_r);
    add_int("adapter_hidden_override", &ExperimentConfig::adapter_hidden_override);
    add_bool("adapter_enabled", &ExperimentConfig::adapter_enabled);
    add_double("prompt_init_std", &ExperimentConfig::prompt_init_std);
    add_double("static_proj_noise", &ExperimentConfig::static_proj_noise);
    t["variant"] = {[](const ExperimentConfig& c) { return std::string(to_string(c.variant)); },
                    [](ExperimentConfig& c, const std::string& v) { c.variant = variant_from_string(v); }};

    t["task"] = {[](const ExperimentConfig& c) { return std::string(to_string(c.task)); },
                 [](ExperimentConfig& c, const std::string& v) { c.task = task_from_string(v); }};
    add_int("n_classes", &ExperimentConfig::n_classes);
    add_double("alpha_img", &ExperimentConfig::alpha_img);
    add_double("alpha_txt", &ExperimentConfig::alpha_txt);
    add_int("n_train", &ExperimentConfig::n_train);
    add_int("n_val", &ExperimentConfig::n_val);
    add_int("n_test", &ExperimentConfig::n_test);
    add_u64("data_seed", &ExperimentConfig::data_seed);

    add_double("eta_train", &ExperimentConfig::eta_train);
    add_double("eta_test", &ExperimentConfig::eta_test);
    t["kind_train"] = {[](const ExperimentConfig& c) { return std::string(to_string(c.kind_train)); },
                       [](ExperimentConfig& c, const std::string& v) { c.kind_train = missing_kind_from_string(v); }};
    t["kind_test"] = {[](const ExperimentConfig& c) { return std::string(to_string(c.kind_test)); },
                      [](ExperimentConfig& c, const std::string& v) { c.kind_test = missing_kind_from_string(v); }};
    add_u64("pattern_seed_train", &ExperimentConfig::pattern_seed_train);
    add_u64("pattern_seed_val", &ExperimentConfig::pattern_seed_val);
    add_u64("pattern_seed_test", &ExperimentConfig::pattern_seed_test);

    add_double("lr", &ExperimentConfig::lr);
    add_double("weight_decay", &ExperimentConfig::weight_decay);
    add_double("beta1", &ExperimentConfig::beta1);
    add_double("beta2", &ExperimentConfig::beta2);
    add_double("adam_eps", &ExperimentConfig::adam_eps);
    add_int("epochs", &ExperimentConfig::epochs);
    add_int("batch_size", &ExperimentConfig::batch_size);
    add_double("warmup_frac", &ExperimentConfig::warmup_frac);
    add_u64("train_seed", &ExperimentConfig::train_seed);

    add_int("pretrain_steps", &ExperimentConfig::pretrain_steps);
    add_double("pretrain_lr", &ExperimentConfig::pretrain_lr);
    add_double("pretrain_weight_decay", &ExperimentConfig::pretrain_weight_decay);
    add_int("pretrain_batch", &ExperimentConfig::pretrain_batch);
    add_u64("backbone_seed", &ExperimentConfig::backbone_seed);

    add_double("multilabel_threshold", &ExperimentConfig::multilabel_threshold);
    t["seeds"] = {[](const ExperimentConfig& c) {
                    std::ostringstream os;
                    for (size_t i = 0; i < c.seeds.size(); ++i) {
                      if (i) os << ',';
                      os << c.seeds[i];
                    }
                    return os.str();
                  },
                  [](ExperimentConfig& c, const std::string& v) {
                    c.seeds.clear();
                    size_t pos = 0;
                    while (pos <= v.size() && !v.empty()) {
                      size_t comma = v.find(',', pos);
                      std::string tok = v.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
                      c.seeds.push_back(parse_u64("seeds", tok));
                      if (comma == std::string::npos) break;
                      pos = comma + 1;
                    }
                    if (c.seeds.empty()) throw InputError("config: key 'seeds': empty list");
                  }};
    t["out_dir"] = {[](const ExperimentConfig& c) { return c.out_dir; },
                    [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }};
    add_int("threads", &ExperimentConfig::threads);
    return t;
  }();
  return table;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string ExperimentConfig::to_flat_string() const {
  std::ostringstream os;
  for (const auto& [key, field] : field_table()) os << key << " = " << field.get(*this) << "\n";
  return os.str();
}

ExperimentConfig ExperimentConfig::from_flat_string(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw InputError(str("config line ", line_no, ": expected 'key = value', got '", t, "'"));
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    auto it = field_table().find(key);
    if (it == field_table().end())
      throw InputError(str("config line ", line_no, ": unknown key '", key, "'"));
    it->second.set(cfg, value);
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError(str("config: cannot open ", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_flat_string(ss.str());
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError(str("config: cannot open ", tmp.string()));
    out << to_flat_string();
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::string> ExperimentConfig::validate() const {
  std::vector<std::string> bad;
  auto req = [&](bool ok, const std::string& msg) {
    if (!ok) bad.push_back(msg);
  };
  req(d >= 1, "d must be >= 1");
  req(heads >= 1, "heads must be >= 1");
  req(heads >= 1 && d % std::max(heads, 1) == 0, "heads must divide d");
  req(layers >= 1, "layers must be >= 1");
  req(t_img >= 1, "t_img must be >= 1");
  req(t_txt >= 1, "t_txt must be >= 1");
  req(vocab_img >= 2 && vocab_txt >= 2, "vocabularies must have at least 2 entries");
  req(patch_dim >= 1, "patch_dim must be >= 1");
  req(prompt_len >= 1, "prompt_len must be >= 1");
  req(prompt_depth >= 1, "prompt_depth must be >= 1");
  req(prompt_depth <= layers, str("prompt_depth (", prompt_depth, ") must be <= layers (", layers, ")"));
  req(d_static >= 1, "d_static must be >= 1");
  req(bottleneck_ratio >= 1 && bottleneck_ratio <= d, "bottleneck_ratio must be in [1, d]");
  req(reduction_r > 0.0, "reduction_r must be positive");
  req(adapter_hidden_override >= 0, "adapter_hidden_override must be >= 0");
  req(prompt_init_std > 0.0, "prompt_init_std must be positive");
  req(n_classes >= 2, "n_classes must be >= 2");
  req(alpha_img >= 0.0 && alpha_img <= 1.0, "alpha_img must be in [0,1]");
  req(alpha_txt >= 0.0 && alpha_txt <= 1.0, "alpha_txt must be in [0,1]");
  req(n_train >= 1 && n_val >= 1 && n_test >= 1, "split sizes must be >= 1");
  req(eta_train >= 0.0 && eta_train <= 1.0, "eta_train must be in [0,1]");
  req(eta_test >= 0.0 && eta_test <= 1.0, "eta_test must be in [0,1]");
  req(lr > 0.0, "lr must be positive");
  req(weight_decay >= 0.0, "weight_decay must be >= 0");
  req(beta1 >= 0.0 && beta1 < 1.0, "beta1 must be in [0,1)");
  req(beta2 >= 0.0 && beta2 < 1.0, "beta2 must be in [0,1)");
  req(adam_eps > 0.0, "adam_eps must be positive");
  req(epochs >= 1, "epochs must be >= 1");
  req(batch_size >= 1, "batch_size must be >= 1");
  req(warmup_frac > 0.0 && warmup_frac < 1.0, "warmup_frac must be in (0,1)");
  req(pretrain_steps >= 1, "pretrain_steps must be >= 1");
  req(pretrain_lr > 0.0, "pretrain_lr must be positive");
  req(pretrain_batch >= 1, "pretrain_batch must be >= 1");
  req(multilabel_threshold > 0.0 && multilabel_threshold < 1.0, "multilabel_threshold must be in (0,1)");
  req(!seeds.empty(), "seeds must not be empty");
  req(threads >= 0, "threads must be >= 0");
  return bad;
}

namespace {
uint64_t hash_text(const std::string& s) { return fnv1a(s.data(), s.size()); }
}  // namespace

uint64_t ExperimentConfig::data_key() const {
  return hash_text(str("task=", to_string(task), ";C=", n_classes, ";ti=", t_img, ";tt=", t_txt,
                       ";vi=", vocab_img, ";vt=", vocab_txt, ";ai=", fmt_double(alpha_img),
                       ";at=", fmt_double(alpha_txt), ";ntr=", n_train, ";nva=", n_val,
                       ";nte=", n_test, ";seed=", data_seed));
}

uint64_t ExperimentConfig::backbone_key() const {
  return hash_text(str("data=", data_key(), ";d=", d, ";h=", heads, ";L=", layers,
                       ";pd=", patch_dim, ";ps=", pretrain_steps, ";plr=", fmt_double(pretrain_lr),
                       ";pwd=", fmt_double(pretrain_weight_decay), ";pb=", pretrain_batch,
                       ";bs=", backbone_seed));
}

SynthSpec ExperimentConfig::synth_spec() const {
  SynthSpec s;
  s.task = task;
  s.n_classes = n_classes;
  s.t_img = t_img;
  s.t_txt = t_txt;
  s.vocab_img = vocab_img;
  s.vocab_txt = vocab_txt;
  s.alpha_img = alpha_img;
  s.alpha_txt = alpha_txt;
  s.n_train = n_train;
  s.n_val = n_val;
  s.n_test = n_test;
  return s;
}

void apply_eval_seed(ExperimentConfig& cfg, uint64_t seed) {
  auto mix = [](uint64_t s, uint64_t k) {
    uint64_t x = s * 6364136223846793005ULL + k * 0x9E3779B97F4A7C15ULL + 1442695040888963407ULL;
    x ^= x >> 33;
    return x;
  };
  cfg.train_seed = seed;
  cfg.pattern_seed_train = mix(seed, 1);
  cfg.pattern_seed_val = mix(seed, 2);
  cfg.pattern_seed_test = mix(seed, 3);
}

}  // namespace syp
