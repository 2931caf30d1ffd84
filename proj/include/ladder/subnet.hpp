// SPDX-License-Identifier: Apache-2.0
//
// The ladder of nested sub-network configurations: six size tiers (Demi
// through Trenta) pairing either a depth prefix or a per-layer width slice
// with an embedding dimension. Also the standalone thin-model
// materialization used as an equivalence oracle, and hybrid score fusion of
// paired depth/width models.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ladder/encoder.hpp"

namespace ladder {

enum class Axis { Depth, Width };
enum class Metric { Dot, Cosine };

Axis axis_from_string(const std::string& s);
std::string axis_to_string(Axis a);
Metric metric_from_string(const std::string& s);
std::string metric_to_string(Metric m);

extern const char* const kTierNames[6];  // Demi .. Trenta

struct LadderEntry {
  std::string name;
  int64_t depth_n = 0;
  WidthSpec width;           // FULL on the depth axis
  int64_t embed_dim = 0;

  bool operator==(const LadderEntry&) const = default;
};

struct Ladder {
  Axis axis = Axis::Depth;
  std::vector<LadderEntry> entries;

  void validate(const EncoderConfig& cfg) const;
  const LadderEntry& full_entry() const { return entries.back(); }

  bool operator==(const Ladder&) const = default;
};

// Six entries. Depth: layers N*i/6 at full width. Width: full depth with
// ffn_dim*i/6 FFN units and the nearest multiple of num_heads to
// hidden_dim*i/6 attention channels (exact at the top). Embedding dims
// follow d_i = D / 2^(6-i); the standard 12x768x12x3072 configuration uses
// its established {32, 64, 128, 256, 512, 768} tiers and width tables
// instead. Indivisible configs are rejected with a pointer to explicit
// ladder definitions.
Ladder default_ladder(const EncoderConfig& cfg, Axis axis);

// pool(hidden_states[depth_n] under entry.width) truncated to embed_dim,
// from a fresh forward pass.
Tensor embed_subnet(Tape* tp, const EncoderParams& params, const EncoderConfig& cfg,
                    const LadderEntry& entry, const std::vector<int64_t>& token_ids,
                    PoolMode mode, Rng* dropout_rng = nullptr, bool train_mode = false);

// Same, reusing an existing full-width trace (valid for depth-axis entries
// and the full entry only).
Tensor embed_from_trace(Tape* tp, const ForwardTrace& trace, const LadderEntry& entry,
                        PoolMode mode);

// Standalone smaller encoder equal to the sliced view of the big model:
// first depth_n layers verbatim, per-head-sliced attention projections, and
// leading FFN units.
std::pair<EncoderParams, EncoderConfig> materialize_thin(const EncoderParams& params,
                                                         const EncoderConfig& cfg,
                                                         const LadderEntry& entry);

double similarity(std::span<const double> a, std::span<const double> b, Metric metric);

// Mean of the two branch similarity scores; branches must share one
// embedding dimension.
double hybrid_score(std::span<const double> q_depth, std::span<const double> p_depth,
                    std::span<const double> q_width, std::span<const double> p_width,
                    Metric metric);

// Active parameter count of one entry: embeddings, embedding layernorm, and
// the sliced per-layer weights. The tied MLM head adds no extra matrix.
int64_t entry_param_count(const EncoderConfig& cfg, const LadderEntry& entry);

}  // namespace ladder
