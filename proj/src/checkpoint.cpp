#include "syp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "syp/util.hpp"

namespace syp {

namespace {

constexpr uint32_t kMagic = 0x53595057;  // "SYPW"
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.append(b, 4);
}

void put_u64(std::string& out, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.append(b, 8);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw ParseError("weight container: truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str_field() {
    uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string serialize_payload(const std::map<std::string, WeightContainer::Section>& sections) {
  std::string out;
  put_u32(out, kMagic);
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(sections.size()));
  for (const auto& [sname, sec] : sections) {
    put_str(out, sname);
    put_u32(out, static_cast<uint32_t>(sec.size()));
    for (const auto& [aname, t] : sec) {
      put_str(out, aname);
      put_u32(out, static_cast<uint32_t>(t.rows()));
      put_u32(out, static_cast<uint32_t>(t.cols()));
      size_t bytes = t.numel() * sizeof(double);
      size_t off = out.size();
      out.resize(off + bytes);
      std::memcpy(out.data() + off, t.data(), bytes);
    }
  }
  return out;
}

}  // namespace

const WeightContainer::Section& WeightContainer::section(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end()) throw InputError(str("weight container: no section '", name, "'"));
  return it->second;
}

namespace {
uint64_t fnv_wrap(const std::string& s) { return fnv1a(s.data(), s.size()); }
}  // namespace

uint64_t WeightContainer::checksum() const { return fnv_wrap(serialize_payload(sections_)); }

void WeightContainer::save(const std::filesystem::path& path) const {
  std::string payload = serialize_payload(sections_);
  put_u64(payload, fnv_wrap(payload));
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError(str("weight container: cannot open ", tmp.string()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw InputError(str("weight container: write failed for ", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

WeightContainer WeightContainer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(str("weight container: cannot open ", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string buf = ss.str();
  if (buf.size() < 20) throw ParseError("weight container: too short");
  std::string payload = buf.substr(0, buf.size() - 8);
  Reader tail{buf, buf.size() - 8};
  uint64_t stored = tail.u64();
  if (fnv_wrap(payload) != stored)
    throw ParseError(str("weight container: checksum mismatch in ", path.string()));

  Reader r{buf};
  if (r.u32() != kMagic) throw ParseError("weight container: bad magic");
  uint32_t version = r.u32();
  if (version != kVersion) throw ParseError(str("weight container: unsupported version ", version));
  WeightContainer wc;
  uint32_t n_sections = r.u32();
  for (uint32_t s = 0; s < n_sections; ++s) {
    std::string sname = r.str_field();
    uint32_t n_arrays = r.u32();
    auto& sec = wc.sections_[sname];
    for (uint32_t a = 0; a < n_arrays; ++a) {
      std::string aname = r.str_field();
      int rows = static_cast<int>(r.u32());
      int cols = static_cast<int>(r.u32());
      Tensor t(rows, cols);
      size_t bytes = t.numel() * sizeof(double);
      r.need(bytes);
      std::memcpy(t.data(), buf.data() + r.pos, bytes);
      r.pos += bytes;
      sec[aname] = std::move(t);
    }
  }
  return wc;
}

uint64_t weights_checksum(const std::map<std::string, Tensor>& weights) {
  Fnv1a h;
  for (const auto& [name, t] : weights) {
    h.update(name);
    int32_t r = t.rows(), c = t.cols();
    h.update(&r, sizeof r);
    h.update(&c, sizeof c);
    h.update(t.data(), t.numel() * sizeof(double));
  }
  return h.digest();
}

}  // namespace syp
