#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "magsplat/trainer.hpp"

namespace magsplat {

/// MCK1 container: magic, u32 version, u64 config hash, u64 seed, i64
/// iteration, then length-prefixed sections (scene MGS1, controls CTL1,
/// field FLD1 in f64, raw parameter groups, Adam states, control impact).
/// Every value is stored at full precision, so a round trip is bit-exact.
struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  TrainerState state;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

Checkpoint make_checkpoint(const Trainer& trainer);
void save_checkpoint(const std::string& path, const Trainer& trainer);
/// Throws ConfigHashMismatch when the file was written under another config.
Checkpoint load_checkpoint(const std::string& path, const TrainConfig& expected);

}  // namespace magsplat
