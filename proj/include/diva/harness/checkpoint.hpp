#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diva/autodiff/tensor.hpp"
#include "diva/encoders/params.hpp"

namespace diva::harness {

inline constexpr char kCheckpointMagic[4] = {'D', 'I', 'V', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  ad::Tensor value;
};

// Named tensors in file order. Values are stored as 32-bit floats.
struct Checkpoint {
  std::vector<NamedTensor> tensors;

  const ad::Tensor* find(const std::string& name) const;
  std::vector<std::string> names() const;
  void add(std::string name, const ad::Tensor& value);
  // Every parameter of `store` under `prefix` + name.
  void add_params(const std::string& prefix, const enc::ParamStore& store);
  // Copies `prefix` + name tensors into `store`; FormatError on a missing
  // tensor or a shape mismatch. Nothing is written unless all tensors fit.
  void restore_params(const std::string& prefix, enc::ParamStore& store) const;
  // FormatError listing the expected names when the file holds others.
  void expect_names(const std::vector<std::string>& expected) const;

  // 64-bit fingerprint split into four exactly representable 16-bit values.
  void set_fingerprint(std::uint64_t fingerprint);
  std::uint64_t fingerprint() const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "<memory>");
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Rounds every value to the nearest 32-bit float, matching a save/load cycle.
void round_to_f32(enc::ParamStore& store);

}  // namespace diva::harness
