#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tpgrad/optim.hpp"

namespace tpgrad {

// Binary layout (little-endian):
//   "TPGRAD1\0"                 8-byte magic
//   u32 version                 currently 1
//   u32 n_meta, then n_meta x (string key, string value)
//   u32 n_tensors, then n_tensors x (string name, u64 rows, u64 cols, rows*cols f64 row-major)
// where string = u32 length + bytes.

struct NamedTensor {
  std::string name;
  Mat value;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<NamedTensor> tensors;

  const Mat* find(const std::string& name) const;
  const Mat& at(const std::string& name) const;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// FNV-1a of the serialized form.
std::uint64_t digest(const Checkpoint& ckpt);

void add_network(Checkpoint& ckpt, const ForwardNet& net);
void add_feedback(Checkpoint& ckpt, const FeedbackPathway& fb);
void add_adam(Checkpoint& ckpt, const std::string& prefix, const AdamState& state);

ForwardNet network_from(const Checkpoint& ckpt);
FeedbackPathway feedback_from(const Checkpoint& ckpt);
AdamState adam_from(const Checkpoint& ckpt, const std::string& prefix);

}  // namespace tpgrad
