// SPDX-License-Identifier: Apache-2.0
//
// Masked-autoencoder pre-training over the ladder: a lightly masked input
// is encoded, each entry's pooled sub-dimension output is projected to full
// width and injected as the CLS of a heavily masked copy, and a one-layer
// decoder reconstructs it. Encoder and decoder MLM losses are averaged over
// entries; the decoder is discarded after pre-training.

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ladder/data.hpp"
#include "ladder/srl.hpp"
#include "ladder/subnet.hpp"

namespace ladder {

struct MaskedSample {
  std::vector<int64_t> input_ids;       // MASK substituted at mask positions
  std::vector<int64_t> labels;          // original id on mask positions, -1 elsewhere
  std::vector<int64_t> mask_positions;  // sorted, never position 0
};

constexpr int64_t kLabelSentinel = -1;

// Independently masks every non-CLS, non-PAD position with probability p,
// resampling until at least one position is masked. replace_prob is the
// chance a selected position is actually swapped for MASK (1 = always).
MaskedSample mask_tokens(const std::vector<int64_t>& ids, double p, Rng& rng,
                         double replace_prob = 1.0);

struct SmaeParams {
  EncoderParams encoder;
  Tensor w;             // [D x D] sub-dimension projection
  LayerParams decoder;  // one full-width layer; embeddings and MLM head are shared

  static SmaeParams init(const EncoderConfig& cfg, Rng& rng);
  std::vector<Tensor*> all();
  void zero_grads();
};

struct SmaeConfig {
  double p_enc = 0.3;
  double p_dec = 0.5;
  double mask_replace_prob = 1.0;
  Ladder ladder;
  OptimConfig optim;  // pre-training defaults: lr 1e-4, wd 0.05, cosine, warmup 0.05
  uint64_t seed = 0;

  void validate(const EncoderConfig& cfg) const;  // enforces p_dec > p_enc
};

SmaeConfig default_smae_config();  // optimizer defaults only; ladder left empty

// Encoder output for one entry on the lightly masked input: the projected
// token matrix (V_n^d W_{1:d}, [|x| x D]) and its CLS row.
std::pair<Tensor, Tensor> encode_and_project(Tape* tp, const SmaeParams& params,
                                             const EncoderConfig& cfg, const LadderEntry& entry,
                                             const std::vector<int64_t>& x_enc_ids);

// MLM negative log-likelihood of the masked positions given the projected
// encoder states, through the tied head.
Tensor encoder_mlm_loss(Tape* tp, const SmaeParams& params, const EncoderConfig& cfg,
                        const LadderEntry& entry, const MaskedSample& masked);

// Decoder loss: token+position embeddings of the heavily masked copy with
// the CLS slot replaced by cls_vec, one transformer layer, tied head.
Tensor decoder_mlm_loss(Tape* tp, const SmaeParams& params, const EncoderConfig& cfg,
                        const MaskedSample& x_dec_masked, const Tensor& cls_vec);

// Mean over ladder entries of (encoder + decoder) losses, averaged over the
// batch; each sample's two maskings are drawn once and shared across entries.
Tensor smae_loss(Tape* tp, const SmaeParams& params, const EncoderConfig& cfg,
                 const SmaeConfig& mcfg, const std::vector<std::vector<int64_t>>& batch_ids,
                 Rng& mask_rng);

// AdamW pre-training over a line corpus; mutates params in place. The
// returned log reuses the SRL format with the encoder/decoder split in the
// task/kl columns' place.
struct SmaeLogEntry {
  int64_t step = 0;
  double loss = 0.0, lr = 0.0;
};

std::vector<SmaeLogEntry> pretrain_smae(SmaeParams& params, const EncoderConfig& cfg,
                                        const SmaeConfig& mcfg,
                                        const std::vector<std::string>& corpus,
                                        const Vocab& vocab,
                                        const TrainState* resume = nullptr,
                                        TrainState* final_state = nullptr);

}  // namespace ladder
