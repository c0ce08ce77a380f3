#include "diva/harness/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "diva/error.hpp"

namespace diva::harness {

namespace {

constexpr const char* kFingerprintName = "meta.fingerprint";

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFU));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  float f32(const char* what) {
    const std::uint32_t u = u32(what);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      std::ostringstream msg;
      msg << source_ << ": truncated checkpoint while reading " << what << " at byte " << pos_ << " (file has "
          << bytes_.size() << " bytes)";
      throw FormatError(msg.str());
    }
  }
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

const ad::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  for (const auto& t : tensors) out.push_back(t.name);
  return out;
}

void Checkpoint::add(std::string name, const ad::Tensor& value) {
  if (find(name)) throw ContractError("checkpoint: duplicate tensor name " + name);
  tensors.push_back({std::move(name), value});
}

void Checkpoint::add_params(const std::string& prefix, const enc::ParamStore& store) {
  for (const auto& p : store.all()) add(prefix + p.name, p.var.value());
}

void Checkpoint::restore_params(const std::string& prefix, enc::ParamStore& store) const {
  std::vector<const ad::Tensor*> found;
  for (const auto& p : store.all()) {
    const ad::Tensor* t = find(prefix + p.name);
    if (!t) throw FormatError("checkpoint lacks tensor " + prefix + p.name);
    if (t->shape() != p.var.value().shape())
      throw FormatError("checkpoint tensor " + prefix + p.name + " has shape " + ad::shape_str(t->shape()) +
                        ", model expects " + ad::shape_str(p.var.value().shape()));
    found.push_back(t);
  }
  for (std::size_t i = 0; i < found.size(); ++i) store[i].var.mutable_value() = *found[i];
}

void Checkpoint::expect_names(const std::vector<std::string>& expected) const {
  std::vector<std::string> unknown;
  for (const auto& t : tensors) {
    if (t.name == kFingerprintName) continue;
    if (std::find(expected.begin(), expected.end(), t.name) == expected.end()) unknown.push_back(t.name);
  }
  if (unknown.empty()) return;
  std::string msg = "checkpoint holds unknown tensors:";
  for (const auto& u : unknown) msg += " " + u;
  msg += "\nexpected names:";
  for (const auto& e : expected) msg += "\n  " + e;
  throw FormatError(msg);
}

void Checkpoint::set_fingerprint(std::uint64_t fingerprint) {
  ad::Tensor t({4});
  for (int i = 0; i < 4; ++i) t[static_cast<std::size_t>(i)] = static_cast<double>((fingerprint >> (16 * i)) & 0xFFFFU);
  for (auto& e : tensors)
    if (e.name == kFingerprintName) {
      e.value = t;
      return;
    }
  tensors.push_back({kFingerprintName, t});
}

std::uint64_t Checkpoint::fingerprint() const {
  const ad::Tensor* t = find(kFingerprintName);
  if (!t || t->numel() != 4) throw FormatError("checkpoint has no configuration fingerprint");
  std::uint64_t f = 0;
  for (int i = 0; i < 4; ++i) f |= static_cast<std::uint64_t>((*t)[static_cast<std::size_t>(i)]) << (16 * i);
  return f;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    const auto& shape = t.value.shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.value.values()) {
      const float f = static_cast<float>(v);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      put_u32(out, u);
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  const std::string magic = r.str(4, "magic");
  if (magic != std::string(kCheckpointMagic, 4))
    throw FormatError(source + ": not a checkpoint (magic '" + magic + "', expected 'DIVA')");
  const std::uint32_t version = r.u32("format version");
  if (version != kCheckpointVersion)
    throw FormatError(source + ": checkpoint format version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  const std::uint32_t count = r.u32("tensor count");
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32("name length");
    std::string name = r.str(len, "tensor name");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw FormatError(source + ": tensor " + name + " has invalid rank " + std::to_string(rank));
    ad::Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32("dimension");
      if (dim == 0) throw FormatError(source + ": tensor " + name + " has a zero dimension");
      shape.push_back(dim);
      numel *= dim;
    }
    if (numel > (bytes.size() - r.pos()) / 4)
      throw FormatError(source + ": truncated checkpoint, tensor " + name + " needs " + std::to_string(numel * 4) +
                        " bytes of values");
    ad::Tensor t(shape);
    for (std::size_t e = 0; e < numel; ++e) t[e] = static_cast<double>(r.f32("values"));
    if (ckpt.find(name)) throw FormatError(source + ": duplicate tensor " + name);
    ckpt.tensors.push_back({std::move(name), std::move(t)});
  }
  if (!r.done()) throw FormatError(source + ": trailing bytes after the last tensor");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write checkpoint " + path);
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("write failed for checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), path);
}

void round_to_f32(enc::ParamStore& store) {
  for (auto& p : store.all())
    for (double& v : p.var.mutable_value().values()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace diva::harness
