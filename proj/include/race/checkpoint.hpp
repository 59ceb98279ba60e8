#pragma once

#include <cstdint>
#include <string>

#include "race/model.hpp"

namespace race {

// Checkpoint container, little-endian binary:
//   magic "RACEKPT1" | u32 version (1) | u64 vocab_hash
//   u32 config_json_len | config JSON (ModelConfig fields + kind)
//   u32 param_count, then per parameter:
//     u32 name_len | name | u32 ndim | i32 dims... | f64 values (row-major)
// Values are stored as f64 regardless of the model's compute precision;
// float->double->float round-trips exactly.
template <class S>
void save_checkpoint(const std::string& path, RaceModel<S>& model, uint64_t vocab_hash);

struct CheckpointInfo {
    ModelConfig config;
    uint64_t vocab_hash = 0;
};

CheckpointInfo peek_checkpoint(const std::string& path);

template <class S>
RaceModel<S> load_checkpoint(const std::string& path, uint64_t* vocab_hash_out = nullptr);

// FNV-1a over the file bytes; indexes record it to pin the encoder they
// were built with.
uint64_t file_hash(const std::string& path);
std::string hash_hex(uint64_t h);

}  // namespace race
