#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace syp {

// Builds a message from any streamable pieces.
template <class... Args>
std::string str(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

// Thrown on violated operation contracts (shape mismatches, bad cases, ...).
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Thrown on bad user-facing inputs (config values, file contents, ...).
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown on malformed files.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FNV-1a, used for content checksums of weight containers and CSV bytes.
class Fnv1a {
 public:
  void update(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  uint64_t digest() const { return h_; }

 private:
  uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline uint64_t fnv1a(const void* data, size_t n) {
  Fnv1a h;
  h.update(data, n);
  return h.digest();
}

}  // namespace syp
