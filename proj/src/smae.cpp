// SPDX-License-Identifier: Apache-2.0

#include "ladder/smae.hpp"

#include <algorithm>
#include <cmath>

#include "ladder/errors.hpp"

namespace ladder {

MaskedSample mask_tokens(const std::vector<int64_t>& ids, double p, Rng& rng,
                         double replace_prob) {
  if (!(p > 0.0 && p < 1.0)) {
    throw ConfigError("mask_tokens: p must lie in (0, 1), got " + std::to_string(p));
  }
  if (ids.size() < 2) throw ConfigError("mask_tokens: need at least 2 tokens");
  std::vector<int64_t> candidates;
  for (size_t i = 1; i < ids.size(); ++i) {
    if (ids[i] != kPadId) candidates.push_back(static_cast<int64_t>(i));
  }
  if (candidates.empty()) throw DataError("mask_tokens: nothing but padding to mask");

  MaskedSample out;
  for (int attempt = 0; attempt < 10000; ++attempt) {
    out.mask_positions.clear();
    for (int64_t pos : candidates) {
      if (rng.uniform() < p) out.mask_positions.push_back(pos);
    }
    if (!out.mask_positions.empty()) break;
  }
  if (out.mask_positions.empty()) out.mask_positions.push_back(candidates[0]);

  out.input_ids = ids;
  out.labels.assign(ids.size(), kLabelSentinel);
  for (int64_t pos : out.mask_positions) {
    out.labels[static_cast<size_t>(pos)] = ids[static_cast<size_t>(pos)];
    if (replace_prob >= 1.0 || rng.uniform() < replace_prob) {
      out.input_ids[static_cast<size_t>(pos)] = kMaskId;
    }
  }
  return out;
}

SmaeParams SmaeParams::init(const EncoderConfig& cfg, Rng& rng) {
  SmaeParams p;
  p.encoder = EncoderParams::init(cfg, rng);
  p.w = Tensor::randn({cfg.hidden_dim, cfg.hidden_dim}, rng, 0.02, true);
  p.decoder = EncoderParams::init_layer(cfg, rng);
  return p;
}

std::vector<Tensor*> SmaeParams::all() {
  std::vector<Tensor*> out = encoder.all();
  out.push_back(&w);
  for (Tensor* t : {&decoder.wq, &decoder.wk, &decoder.wv, &decoder.wo, &decoder.ffn_in,
                    &decoder.ffn_out, &decoder.ln1_gain, &decoder.ln1_bias, &decoder.ln2_gain,
                    &decoder.ln2_bias}) {
    out.push_back(t);
  }
  return out;
}

void SmaeParams::zero_grads() {
  for (Tensor* t : all()) t->zero_grad();
}

void SmaeConfig::validate(const EncoderConfig& cfg) const {
  if (!(p_enc > 0.0 && p_enc < 1.0) || !(p_dec > 0.0 && p_dec < 1.0)) {
    throw ConfigError("smae: p_enc and p_dec must lie in (0, 1)");
  }
  if (!(p_dec > p_enc)) {
    throw ConfigError("smae: p_dec (" + std::to_string(p_dec) +
                      ") must exceed p_enc (" + std::to_string(p_enc) + ")");
  }
  if (!(mask_replace_prob > 0.0 && mask_replace_prob <= 1.0)) {
    throw ConfigError("smae: mask_replace_prob must lie in (0, 1]");
  }
  ladder.validate(cfg);
  optim.validate();
}

SmaeConfig default_smae_config() {
  SmaeConfig cfg;
  cfg.optim.lr = 1e-4;
  cfg.optim.weight_decay = 0.05;
  cfg.optim.schedule = ScheduleKind::Cosine;
  cfg.optim.warmup_ratio = 0.05;
  return cfg;
}

namespace {

// Tied MLM head restricted to the masked rows.
Tensor masked_nll(Tape* tp, const SmaeParams& params, const Tensor& states,
                  const MaskedSample& masked) {
  Tensor rows = gather_rows(tp, states, masked.mask_positions);
  Tensor logits = add(tp, matmul(tp, rows, transpose(tp, params.encoder.token_embeddings)),
                      params.encoder.mlm_bias);
  std::vector<int64_t> targets;
  targets.reserve(masked.mask_positions.size());
  for (int64_t pos : masked.mask_positions) {
    targets.push_back(masked.labels[static_cast<size_t>(pos)]);
  }
  return nll_rows(tp, logits, targets);
}

std::vector<double> pad_mask(const std::vector<int64_t>& ids) {
  std::vector<double> mask(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) mask[i] = ids[i] == kPadId ? 0.0 : 1.0;
  return mask;
}

// Projected states for one entry from an existing full-width trace.
std::pair<Tensor, Tensor> project_from_trace(Tape* tp, const SmaeParams& params,
                                             const ForwardTrace& trace,
                                             const LadderEntry& entry) {
  const Tensor& hidden = trace.hidden_states[static_cast<size_t>(entry.depth_n)];
  Tensor v = entry.embed_dim < hidden.dim(1)
                 ? narrow_cols(tp, hidden, 0, entry.embed_dim)
                 : hidden;
  Tensor projected = matmul(tp, v, narrow_rows(tp, params.w, 0, entry.embed_dim));
  return {projected, pick_row(tp, projected, 0)};
}

}  // namespace

std::pair<Tensor, Tensor> encode_and_project(Tape* tp, const SmaeParams& params,
                                             const EncoderConfig& cfg, const LadderEntry& entry,
                                             const std::vector<int64_t>& x_enc_ids) {
  ForwardTrace trace =
      encoder_forward(tp, params.encoder, cfg, x_enc_ids, entry.width, nullptr, false);
  return project_from_trace(tp, params, trace, entry);
}

Tensor encoder_mlm_loss(Tape* tp, const SmaeParams& params, const EncoderConfig& cfg,
                        const LadderEntry& entry, const MaskedSample& masked) {
  if (masked.mask_positions.empty()) throw ConfigError("encoder_mlm_loss: empty mask set");
  auto [projected, cls] = encode_and_project(tp, params, cfg, entry, masked.input_ids);
  (void)cls;
  return masked_nll(tp, params, projected, masked);
}

Tensor decoder_mlm_loss(Tape* tp, const SmaeParams& params, const EncoderConfig& cfg,
                        const MaskedSample& x_dec_masked, const Tensor& cls_vec) {
  if (x_dec_masked.mask_positions.empty()) {
    throw ConfigError("decoder_mlm_loss: empty mask set");
  }
  const std::vector<int64_t>& ids = x_dec_masked.input_ids;
  int64_t t_len = static_cast<int64_t>(ids.size());
  Tensor emb = add(tp, embedding(tp, params.encoder.token_embeddings, ids),
                   narrow_rows(tp, params.encoder.position_embeddings, 0, t_len));
  emb = replace_row(tp, emb, 0, cls_vec);
  Tensor x = layer_norm(tp, emb, params.encoder.emb_ln_gain, params.encoder.emb_ln_bias);

  std::vector<double> mask = pad_mask(ids);
  bool any_pad = false;
  for (double m : mask) any_pad = any_pad || m == 0.0;
  Tensor mask_bias;
  if (any_pad) {
    mask_bias = Tensor::zeros({t_len});
    for (int64_t i = 0; i < t_len; ++i) {
      if (mask[static_cast<size_t>(i)] == 0.0) mask_bias.vec()[static_cast<size_t>(i)] = -1e30;
    }
  }
  Tensor out = transformer_layer(tp, x, params.decoder, cfg.num_heads,
                                 any_pad ? &mask_bias : nullptr, cfg.attention_dim(),
                                 cfg.ffn_dim, 0.0, nullptr, false);
  return masked_nll(tp, params, out, x_dec_masked);
}

Tensor smae_loss(Tape* tp, const SmaeParams& params, const EncoderConfig& cfg,
                 const SmaeConfig& mcfg, const std::vector<std::vector<int64_t>>& batch_ids,
                 Rng& mask_rng) {
  if (batch_ids.empty()) throw ConfigError("smae_loss: empty batch");
  int64_t entries = static_cast<int64_t>(mcfg.ladder.entries.size());
  if (entries == 0) throw ConfigError("smae_loss: empty ladder");

  Tensor acc;
  for (const std::vector<int64_t>& ids : batch_ids) {
    // one encoder and one decoder masking per sample, shared across entries
    MaskedSample x_enc = mask_tokens(ids, mcfg.p_enc, mask_rng, mcfg.mask_replace_prob);
    MaskedSample x_dec = mask_tokens(ids, mcfg.p_dec, mask_rng, mcfg.mask_replace_prob);

    // Depth entries share one full-width forward; width entries re-encode.
    ForwardTrace full_trace;
    if (mcfg.ladder.axis == Axis::Depth) {
      full_trace = encoder_forward(tp, params.encoder, cfg, x_enc.input_ids, WidthSpec::full(),
                                   nullptr, false);
    }
    for (const LadderEntry& entry : mcfg.ladder.entries) {
      Tensor projected, cls;
      if (mcfg.ladder.axis == Axis::Depth) {
        std::tie(projected, cls) = project_from_trace(tp, params, full_trace, entry);
      } else {
        std::tie(projected, cls) = encode_and_project(tp, params, cfg, entry, x_enc.input_ids);
      }
      Tensor l_enc = masked_nll(tp, params, projected, x_enc);
      Tensor l_dec = decoder_mlm_loss(tp, params, cfg, x_dec, cls);
      Tensor pair_sum = add(tp, l_enc, l_dec);
      acc = acc.defined() ? add(tp, acc, pair_sum) : pair_sum;
    }
  }
  double denom = static_cast<double>(entries) * static_cast<double>(batch_ids.size());
  return scale(tp, acc, 1.0 / denom);
}

std::vector<SmaeLogEntry> pretrain_smae(SmaeParams& params, const EncoderConfig& cfg,
                                        const SmaeConfig& mcfg,
                                        const std::vector<std::string>& corpus,
                                        const Vocab& vocab, const TrainState* resume,
                                        TrainState* final_state) {
  cfg.validate();
  mcfg.validate(cfg);
  if (corpus.empty()) throw ConfigError("pretrain_smae: empty corpus");

  int64_t steps_per_epoch = (static_cast<int64_t>(corpus.size()) + mcfg.optim.batch_size - 1) /
                            mcfg.optim.batch_size;
  int64_t total_steps = steps_per_epoch * mcfg.optim.epochs;
  if (mcfg.optim.max_steps > 0) total_steps = std::min(total_steps, mcfg.optim.max_steps);

  AdamW opt(params.all(), mcfg.optim);
  int64_t start_step = 0;
  if (resume != nullptr) {
    opt.restore(resume->optimizer);
    start_step = resume->global_step;
  }

  std::vector<SmaeLogEntry> log;
  int64_t cached_epoch = -1;
  std::vector<std::vector<int64_t>> epoch_ids;
  std::vector<size_t> order;
  params.zero_grads();
  for (int64_t step = start_step; step < total_steps; ++step) {
    int64_t epoch = step / steps_per_epoch;
    if (epoch != cached_epoch) {
      order.resize(corpus.size());
      for (size_t i = 0; i < corpus.size(); ++i) order[i] = i;
      Rng shuffle = Rng(mcfg.seed, "smae-shuffle").fork(static_cast<uint64_t>(epoch));
      for (size_t i = order.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(shuffle.uniform_int(static_cast<int64_t>(i)));
        std::swap(order[i - 1], order[j]);
      }
      epoch_ids.clear();
      for (size_t i : order) epoch_ids.push_back(tokenize(corpus[i], vocab, cfg.max_seq_len));
      cached_epoch = epoch;
    }

    size_t begin = static_cast<size_t>((step % steps_per_epoch) * mcfg.optim.batch_size);
    size_t end = std::min(epoch_ids.size(), begin + static_cast<size_t>(mcfg.optim.batch_size));
    std::vector<std::vector<int64_t>> batch(epoch_ids.begin() + static_cast<int64_t>(begin),
                                            epoch_ids.begin() + static_cast<int64_t>(end));

    Tape tape;
    Rng mask_rng = Rng(mcfg.seed, "smae-mask").fork(static_cast<uint64_t>(step));
    Tensor loss = smae_loss(&tape, params, cfg, mcfg, batch, mask_rng);
    double value = loss.item();
    if (!std::isfinite(value)) {
      throw TrainingError("pretrain_smae: non-finite loss at step " + std::to_string(step));
    }
    tape.backward(loss);
    double lr_factor =
        schedule_factor(mcfg.optim.schedule, mcfg.optim.warmup_ratio, step, total_steps);
    opt.step(lr_factor);
    log.push_back(SmaeLogEntry{step, value, mcfg.optim.lr * lr_factor});
  }
  if (final_state != nullptr) {
    final_state->global_step = total_steps;
    final_state->optimizer = opt.state();
  }
  return log;
}

}  // namespace ladder
