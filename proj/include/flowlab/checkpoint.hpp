#pragma once

#include <map>
#include <string>

#include "flowlab/model.hpp"

namespace flowlab {

// Versioned checkpoint container: a JSON header (model config, tensor table,
// metadata) followed by raw little-endian 64-bit payloads, plus a sibling
// plain-text manifest carrying a content hash. Round-trips are bit-exact.
struct Checkpoint {
  ModelConfig config;
  ParamSet params;
  std::map<std::string, std::string> metadata;  // e.g. update step, config hash
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a 64-bit, hex-encoded; used for checkpoint payloads and config hashes.
std::string fnv1a64_hex(const std::string& bytes);

}  // namespace flowlab
