// SPDX-License-Identifier: Apache-2.0
//
// Post-layernorm transformer encoder (BERT-style layer order, learned
// absolute positions) whose forward pass records every intermediate layer
// output, so each depth prefix of one full run doubles as the output of the
// corresponding truncated model. Width-reduced runs use only the leading
// per-head attention columns and leading FFN units of the full weights; the
// residual stream always stays hidden_dim wide.

#pragma once

#include <cstdint>
#include <vector>

#include "ladder/rng.hpp"
#include "ladder/tensor.hpp"

namespace ladder {

// Reserved token ids, fixed across the project and persisted in vocabularies.
constexpr int64_t kPadId = 0;
constexpr int64_t kClsId = 1;
constexpr int64_t kMaskId = 2;
constexpr int64_t kUnkId = 3;

enum class PoolMode { Cls, Mean };

struct EncoderConfig {
  int64_t vocab_size = 0;
  int64_t max_seq_len = 0;
  int64_t num_layers = 0;
  int64_t hidden_dim = 0;
  int64_t num_heads = 0;
  int64_t ffn_dim = 0;
  // Width of the attention projections; hidden_dim except in standalone
  // width-reduced models materialized from a larger one.
  int64_t attn_dim = -1;
  double dropout_p = 0.0;

  int64_t attention_dim() const { return attn_dim < 0 ? hidden_dim : attn_dim; }
  int64_t head_dim() const { return attention_dim() / num_heads; }
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

struct LayerParams {
  Tensor wq, wk, wv;      // [D x A]
  Tensor wo;              // [A x D]
  Tensor ffn_in;          // [D x F]
  Tensor ffn_out;         // [F x D]
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // [D]
};

struct EncoderParams {
  Tensor token_embeddings;     // [vocab x D], also the tied MLM decoder
  Tensor position_embeddings;  // [max_seq_len x D]
  Tensor emb_ln_gain, emb_ln_bias;
  std::vector<LayerParams> layers;
  Tensor mlm_bias;             // [vocab]

  static EncoderParams init(const EncoderConfig& cfg, Rng& rng);
  static LayerParams init_layer(const EncoderConfig& cfg, Rng& rng);

  // Stable parameter ordering shared by the optimizer and checkpoints.
  std::vector<Tensor*> all();
  std::vector<const Tensor*> all() const;
  EncoderParams clone() const;
  void zero_grads();
  int64_t total_params() const;
};

// Active widths for one forward pass; negative fields mean "everything the
// stored weights have".
struct WidthSpec {
  int64_t ffn_active = -1;
  int64_t attn_active = -1;

  bool is_full() const { return ffn_active < 0 && attn_active < 0; }
  static WidthSpec full() { return {}; }
  void validate(const EncoderConfig& cfg) const;

  bool operator==(const WidthSpec&) const = default;
};

struct ForwardTrace {
  // hidden_states[0] is the embedding output, hidden_states[n] the output of
  // layer n; every entry is [|x| x D].
  std::vector<Tensor> hidden_states;
  std::vector<double> attention_mask;  // 1 for real tokens, 0 for padding
};

ForwardTrace encoder_forward(Tape* tp, const EncoderParams& params, const EncoderConfig& cfg,
                             const std::vector<int64_t>& token_ids, const WidthSpec& width,
                             Rng* dropout_rng, bool train_mode);

// One post-layernorm block (attention, add&norm, FFN, add&norm) over
// [|x| x D] input. active_attn/active_ffn select leading per-head attention
// columns and leading FFN units of the stored weights; attn_mask_bias, when
// given, is added to every attention score row.
Tensor transformer_layer(Tape* tp, const Tensor& x, const LayerParams& lp, int64_t num_heads,
                         const Tensor* attn_mask_bias, int64_t active_attn, int64_t active_ffn,
                         double dropout_p, Rng* dropout_rng, bool train_mode);

// CLS: row 0. MEAN: average over rows whose mask entry is nonzero.
Tensor pool(Tape* tp, const Tensor& trace_layer, const std::vector<double>& mask,
            PoolMode mode);

// First d components of a pooled vector.
Tensor slice_embedding(Tape* tp, const Tensor& v, int64_t d);

}  // namespace ladder
