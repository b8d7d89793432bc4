#pragma once

// Binary container with a JSON header followed by little-endian float32
// payloads.  Used for parameter checkpoints here and (with a different
// header schema) for feature files in dataio.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gf/tensor.h"

namespace gf {

// 64-bit FNV-1a over raw bytes; stored in headers as a hex string so readers
// can verify payload integrity.
uint64_t fnv1a64(const void* data, size_t n);
std::string hash_hex(uint64_t h);

namespace container {

// Writes magic (8 bytes) + u64 header length + header JSON + payload.
void write_file(const std::string& path, const char magic[8],
                const nlohmann::json& header, const std::vector<float>& payload);

struct Loaded {
  nlohmann::json header;
  std::vector<float> payload;
};

// Reads and validates a container written by write_file.  If the header has
// a "payload_hash" field the payload is re-hashed and compared.
Loaded read_file(const std::string& path, const char magic[8]);

}  // namespace container

// Saves every tensor of `params` in creation order.  Byte-identical for
// identical parameter sets, which backs the reproducibility guarantees.
void save_checkpoint(const std::string& path, const ParamSet& params,
                     const nlohmann::json& meta = nlohmann::json::object());

// Loads into an already-constructed ParamSet; names and shapes must match
// exactly (the model architecture is rebuilt from config before loading).
void load_checkpoint(const std::string& path, ParamSet& params);

nlohmann::json read_checkpoint_meta(const std::string& path);

}  // namespace gf
