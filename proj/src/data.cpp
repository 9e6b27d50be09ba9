#include "syp/data.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "syp/util.hpp"

namespace syp {

const char* to_string(MissingCase c) {
  switch (c) {
    case MissingCase::Complete: return "complete";
    case MissingCase::TextMissing: return "text_missing";
    case MissingCase::ImageMissing: return "image_missing";
  }
  return "?";
}

const char* to_string(MissingKind k) {
  switch (k) {
    case MissingKind::TextOnly: return "text";
    case MissingKind::ImageOnly: return "image";
    case MissingKind::Both: return "both";
  }
  return "?";
}

MissingKind missing_kind_from_string(const std::string& s) {
  if (s == "text") return MissingKind::TextOnly;
  if (s == "image") return MissingKind::ImageOnly;
  if (s == "both") return MissingKind::Both;
  throw InputError(str("unknown missing kind '", s, "' (expected text|image|both)"));
}

size_t MissingPattern::count(MissingCase c) const {
  size_t n = 0;
  for (MissingCase x : cases)
    if (x == c) ++n;
  return n;
}

MissingPattern generate_pattern(int n, double eta, MissingKind kind, uint64_t seed) {
  if (n < 1) throw InputError(str("generate_pattern: n must be >= 1, got ", n));
  if (!(eta >= 0.0 && eta <= 1.0))
    throw InputError(str("generate_pattern: eta ", eta, " outside [0,1]"));
  MissingPattern p;
  p.eta = eta;
  p.kind = kind;
  p.seed = seed;
  p.cases.assign(static_cast<size_t>(n), MissingCase::Complete);

  size_t n_text_missing = 0, n_image_missing = 0;
  if (kind == MissingKind::Both) {
    size_t half = static_cast<size_t>(std::floor(static_cast<double>(n) * eta / 2.0));
    n_text_missing = half;
    n_image_missing = half;
  } else {
    size_t cnt = static_cast<size_t>(std::floor(static_cast<double>(n) * eta));
    if (kind == MissingKind::TextOnly) {
      n_text_missing = cnt;  // instances that are image-only, i.e. text removed
    } else {
      n_image_missing = cnt;
    }
  }

  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);
  size_t pos = 0;
  for (size_t i = 0; i < n_text_missing; ++i) p.cases[static_cast<size_t>(order[pos++])] = MissingCase::TextMissing;
  for (size_t i = 0; i < n_image_missing; ++i) p.cases[static_cast<size_t>(order[pos++])] = MissingCase::ImageMissing;
  return p;
}

ModalitySample apply_mask(const ModalitySample& sample, MissingCase c) {
  ModalitySample out = sample;
  switch (c) {
    case MissingCase::Complete:
      break;
    case MissingCase::TextMissing:
      if (!sample.image_present)
        throw ContractError("apply_mask: cannot remove text from an image-missing sample");
      out.text_present = false;
      break;
    case MissingCase::ImageMissing:
      if (!sample.text_present)
        throw ContractError("apply_mask: cannot remove image from a text-missing sample");
      out.image_present = false;
      break;
  }
  return out;
}

namespace {

std::vector<double> make_label(TaskKind task, int n_classes, int latent,
                               const std::vector<std::vector<double>>& multilabel_map) {
  switch (task) {
    case TaskKind::Multiclass: {
      std::vector<double> y(static_cast<size_t>(n_classes), 0.0);
      y[static_cast<size_t>(latent)] = 1.0;
      return y;
    }
    case TaskKind::Binary:
      return {static_cast<double>(latent % 2)};
    case TaskKind::Multilabel:
      return multilabel_map[static_cast<size_t>(latent)];
  }
  throw ContractError("make_label: bad task");
}

Dataset make_split(const SynthSpec& spec, int n, int id_base, Rng& rng,
                   const std::vector<std::vector<int>>& sig_img,
                   const std::vector<std::vector<int>>& sig_txt,
                   const std::vector<std::vector<double>>& multilabel_map) {
  int latent_classes = spec.task == TaskKind::Binary ? 2 : spec.n_classes;
  Dataset ds;
  ds.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    ModalitySample s;
    s.id = id_base + i;
    int z = rng.below(latent_classes);
    s.label = make_label(spec.task, spec.n_classes, z, multilabel_map);
    s.image_tokens.resize(static_cast<size_t>(spec.t_img));
    for (int p = 0; p < spec.t_img; ++p) {
      bool from_sig = rng.uniform() < spec.alpha_img;
      s.image_tokens[static_cast<size_t>(p)] =
          from_sig ? sig_img[static_cast<size_t>(z)][static_cast<size_t>(p)] : rng.below(spec.vocab_img);
    }
    s.text_tokens.resize(static_cast<size_t>(spec.t_txt));
    for (int p = 0; p < spec.t_txt; ++p) {
      bool from_sig = rng.uniform() < spec.alpha_txt;
      s.text_tokens[static_cast<size_t>(p)] =
          from_sig ? sig_txt[static_cast<size_t>(z)][static_cast<size_t>(p)] : rng.below(spec.vocab_txt);
    }
    ds.push_back(std::move(s));
  }
  return ds;
}

}  // namespace

SynthSplits synth_dataset(const SynthSpec& spec, uint64_t seed) {
  if (!(spec.alpha_img >= 0.0 && spec.alpha_img <= 1.0))
    throw InputError(str("synth_dataset: alpha_img ", spec.alpha_img, " outside [0,1]"));
  if (!(spec.alpha_txt >= 0.0 && spec.alpha_txt <= 1.0))
    throw InputError(str("synth_dataset: alpha_txt ", spec.alpha_txt, " outside [0,1]"));
  if (spec.n_classes < 1 || spec.t_img < 1 || spec.t_txt < 0 || spec.vocab_img < 1 || spec.vocab_txt < 1)
    throw InputError("synth_dataset: sizes must be positive");

  Rng rng(seed);
  int latent_classes = spec.task == TaskKind::Binary ? 2 : spec.n_classes;

  auto make_signature = [&](int t, int vocab) {
    std::vector<std::vector<int>> sig(static_cast<size_t>(latent_classes));
    for (auto& row : sig) {
      row.resize(static_cast<size_t>(t));
      for (auto& x : row) x = rng.below(vocab);
    }
    return sig;
  };
  auto sig_img = make_signature(spec.t_img, spec.vocab_img);
  auto sig_txt = make_signature(spec.t_txt, spec.vocab_txt);

  // Multilabel: each latent class lights its own bit plus a sparse random set.
  std::vector<std::vector<double>> multilabel_map;
  if (spec.task == TaskKind::Multilabel) {
    multilabel_map.resize(static_cast<size_t>(latent_classes));
    for (int z = 0; z < latent_classes; ++z) {
      auto& row = multilabel_map[static_cast<size_t>(z)];
      row.assign(static_cast<size_t>(spec.n_classes), 0.0);
      row[static_cast<size_t>(z)] = 1.0;
      for (int c = 0; c < spec.n_classes; ++c)
        if (c != z && rng.uniform() < 0.12) row[static_cast<size_t>(c)] = 1.0;
    }
  }

  SynthSplits splits;
  splits.train = make_split(spec, spec.n_train, 0, rng, sig_img, sig_txt, multilabel_map);
  splits.val = make_split(spec, spec.n_val, spec.n_train, rng, sig_img, sig_txt, multilabel_map);
  splits.test = make_split(spec, spec.n_test, spec.n_train + spec.n_val, rng, sig_img, sig_txt, multilabel_map);
  return splits;
}

namespace {

template <class T>
std::string join_ints(const std::vector<T>& xs) {
  std::ostringstream os;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i) os << ',';
    os << xs[i];
  }
  return os.str();
}

std::vector<int> parse_int_list(const std::string& field, int line_no, const char* what) {
  std::vector<int> out;
  if (field.empty()) return out;
  size_t pos = 0;
  while (pos <= field.size()) {
    size_t comma = field.find(',', pos);
    std::string tok = field.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      size_t used = 0;
      int v = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ParseError(str("line ", line_no, ": bad ", what, " entry '", tok, "'"));
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(str("save_dataset: cannot open ", path.string()));
  for (const auto& s : ds) {
    std::vector<int> label_ints(s.label.size());
    for (size_t i = 0; i < s.label.size(); ++i) label_ints[i] = static_cast<int>(s.label[i]);
    out << s.id << '\t' << join_ints(s.image_tokens) << '\t' << join_ints(s.text_tokens) << '\t'
        << join_ints(label_ints) << '\t' << (s.image_present ? 1 : 0) << ','
        << (s.text_present ? 1 : 0) << '\n';
  }
  if (!out) throw InputError(str("save_dataset: write failed for ", path.string()));
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(str("load_dataset: cannot open ", path.string()));
  Dataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t pos = 0;
    while (true) {
      size_t tab = line.find('\t', pos);
      fields.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (fields.size() != 5)
      throw ParseError(str("line ", line_no, ": expected 5 tab-separated fields, got ", fields.size()));
    ModalitySample s;
    try {
      s.id = std::stoi(fields[0]);
    } catch (const std::exception&) {
      throw ParseError(str("line ", line_no, ": bad id '", fields[0], "'"));
    }
    s.image_tokens = parse_int_list(fields[1], line_no, "image token");
    s.text_tokens = parse_int_list(fields[2], line_no, "text token");
    auto label_ints = parse_int_list(fields[3], line_no, "label");
    s.label.assign(label_ints.begin(), label_ints.end());
    auto mask = parse_int_list(fields[4], line_no, "presence mask");
    if (mask.size() != 2) throw ParseError(str("line ", line_no, ": presence mask needs 2 bits"));
    s.image_present = mask[0] != 0;
    s.text_present = mask[1] != 0;
    if (!s.image_present && !s.text_present)
      throw ParseError(str("line ", line_no, ": sample with no modality present"));
    ds.push_back(std::move(s));
  }
  return ds;
}

uint64_t dataset_checksum(const Dataset& ds) {
  Fnv1a h;
  auto add_int = [&](int64_t v) { h.update(&v, sizeof v); };
  for (const auto& s : ds) {
    add_int(s.id);
    add_int(static_cast<int64_t>(s.image_tokens.size()));
    for (int t : s.image_tokens) add_int(t);
    add_int(static_cast<int64_t>(s.text_tokens.size()));
    for (int t : s.text_tokens) add_int(t);
    add_int(static_cast<int64_t>(s.label.size()));
    for (double y : s.label) h.update(&y, sizeof y);
    add_int(s.image_present ? 1 : 0);
    add_int(s.text_present ? 1 : 0);
  }
  return h.digest();
}

}  // namespace syp
