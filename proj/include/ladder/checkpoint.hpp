// SPDX-License-Identifier: Apache-2.0
//
// Single-file binary checkpoints: magic, version, length-prefixed sections,
// little-endian 64-bit floats, trailing CRC32. Floats round-trip bit-exactly
// so a resumed run reproduces an uninterrupted one.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "ladder/data.hpp"
#include "ladder/optim.hpp"
#include "ladder/srl.hpp"
#include "ladder/subnet.hpp"

namespace ladder {

constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  EncoderConfig config;
  Vocab vocab;
  EncoderParams params;
  std::optional<Tensor> w;                    // projection from masked pre-training
  std::optional<AdamW::State> optimizer;      // present for resumable checkpoints
  uint64_t seed = 0;
  int64_t global_step = 0;
  Ladder ladder;
  std::string loss_kind;                      // "", "mnrl_cosine", "infonce_dot"
  std::string pool_mode = "cls";
  std::map<std::string, uint64_t> rng_counters;  // per-purpose draw counters
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ladder
