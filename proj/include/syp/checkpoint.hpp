#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "syp/tensor.hpp"

namespace syp {

// Named weight arrays grouped into sections ("backbone.image", "prompts",
// ...). Serialized as a little-endian binary container with a version tag
// and a trailing FNV-1a checksum over everything before it; files are
// written atomically (temp + rename).
class WeightContainer {
 public:
  using Section = std::map<std::string, Tensor>;  // ordered -> deterministic bytes

  Section& section(const std::string& name) { return sections_[name]; }
  const Section& section(const std::string& name) const;
  bool has_section(const std::string& name) const { return sections_.count(name) != 0; }
  const std::map<std::string, Section>& sections() const { return sections_; }

  // Checksum of the serialized payload (no file needed).
  uint64_t checksum() const;

  void save(const std::filesystem::path& path) const;
  static WeightContainer load(const std::filesystem::path& path);

 private:
  std::map<std::string, Section> sections_;
};

// Checksum of one named-tensor map, for freeze and change-set audits.
uint64_t weights_checksum(const std::map<std::string, Tensor>& weights);

}  // namespace syp
