#pragma once

// Checkpoint container. Layout (all integers little-endian):
//   magic "DPSS" | u16 version | u32 meta_len + meta JSON |
//   u32 tensor_count | per tensor: u32 name_len + name, u8 dtype, u8 rank,
//   u64 dims[rank], row-major payload | u32 CRC32 of all preceding bytes.
// Round trips are bit-exact on payloads; CRC or version mismatches reject.

#include <cstdint>
#include <string>

#include "dapass/segnet.hpp"

namespace dapass::ckpt {

constexpr uint16_t kVersion = 1;

struct CheckpointMeta {
    std::string tag;
    int64_t iteration = 0;
    std::string config_echo;  // JSON text of the run config, informational
};

uint32_t crc32(const uint8_t* data, size_t n, uint32_t seed = 0);

void save_checkpoint(const ParamSnapshot<float>& snap, const CheckpointMeta& meta,
                     const std::string& path);

struct LoadedCheckpoint {
    ParamSnapshot<float> snapshot;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace dapass::ckpt
