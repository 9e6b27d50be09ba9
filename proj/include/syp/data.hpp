#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "syp/metrics.hpp"
#include "syp/rng.hpp"

namespace syp {

// Which modality an instance is missing.
enum class MissingCase : uint8_t { Complete = 0, TextMissing = 1, ImageMissing = 2 };

// How a pattern distributes incomplete instances.
enum class MissingKind : uint8_t { TextOnly = 0, ImageOnly = 1, Both = 2 };

const char* to_string(MissingCase c);
const char* to_string(MissingKind k);
MissingKind missing_kind_from_string(const std::string& s);

// One labeled example. Token content is kept in storage even when a modality
// is masked off; embedding replaces masked streams with zero blocks.
struct ModalitySample {
  int id = 0;
  std::vector<int> image_tokens;  // codebook indices, length T_i
  std::vector<int> text_tokens;   // vocabulary indices, length <= T_t
  std::vector<double> label;      // width per task (0/1 bits, one-hot, or single bit)
  bool image_present = true;
  bool text_present = true;

  MissingCase missing_case() const {
    if (image_present && text_present) return MissingCase::Complete;
    return text_present ? MissingCase::ImageMissing : MissingCase::TextMissing;
  }
};

using Dataset = std::vector<ModalitySample>;

// Deterministic assignment of every dataset index to a missing case.
struct MissingPattern {
  double eta = 0.0;
  MissingKind kind = MissingKind::Both;
  uint64_t seed = 0;
  std::vector<MissingCase> cases;

  size_t count(MissingCase c) const;
};

// Seeded uniform shuffle into groups whose sizes follow the floor rule:
// both-missing: floor(n*eta/2) text-only + floor(n*eta/2) image-only;
// single-missing kinds: floor(n*eta) incomplete; the remainder complete.
MissingPattern generate_pattern(int n, double eta, MissingKind kind, uint64_t seed);

// Clears the presence bit for the removed modality; token content stays for
// audit and is ignored downstream. Clearing the only present modality is a
// contract error.
ModalitySample apply_mask(const ModalitySample& sample, MissingCase c);

// Synthetic two-modality task description.
struct SynthSpec {
  TaskKind task = TaskKind::Multiclass;
  int n_classes = 20;       // label width (latent classes for multiclass/multilabel)
  int t_img = 16;           // image tokens per sample
  int t_txt = 16;           // text tokens per sample
  int vocab_img = 100;
  int vocab_txt = 100;
  double alpha_img = 0.75;  // probability a token comes from the class signature
  double alpha_txt = 0.75;
  int n_train = 2000;
  int n_val = 500;
  int n_test = 500;
};

struct SynthSplits {
  Dataset train, val, test;
};

// Class-conditional token sampling: each (class, position) has a fixed
// signature token emitted with probability alpha, otherwise a uniform draw.
// Labels: multiclass -> one-hot of the latent class; binary -> one bit;
// multilabel -> a fixed random class-to-bits pattern with the diagonal set.
SynthSplits synth_dataset(const SynthSpec& spec, uint64_t seed);

// Line-delimited records: id, image tokens, text tokens, label, presence
// mask, tab-separated with comma-separated integer lists.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

uint64_t dataset_checksum(const Dataset& ds);

}  // namespace syp
