// SPDX-License-Identifier: Apache-2.0

#include "ladder/encoder.hpp"

#include <cmath>
#include <string>

#include "ladder/errors.hpp"

namespace ladder {

namespace {
constexpr double kInitStd = 0.02;
constexpr double kMaskBias = -1e30;
}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size <= kUnkId) throw ConfigError("encoder.vocab_size must exceed the reserved ids");
  if (max_seq_len < 1) throw ConfigError("encoder.max_seq_len must be >= 1");
  if (num_layers < 1) throw ConfigError("encoder.num_layers must be >= 1");
  if (hidden_dim < 1 || ffn_dim < 1 || num_heads < 1) {
    throw ConfigError("encoder dims must be >= 1");
  }
  if (attention_dim() % num_heads != 0) {
    throw ConfigError("encoder.attn_dim " + std::to_string(attention_dim()) +
                      " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (attention_dim() > hidden_dim) {
    throw ConfigError("encoder.attn_dim must not exceed hidden_dim");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
    throw ConfigError("encoder.dropout_p must lie in [0, 1)");
  }
}

void WidthSpec::validate(const EncoderConfig& cfg) const {
  if (ffn_active >= 0 && (ffn_active < 1 || ffn_active > cfg.ffn_dim)) {
    throw ConfigError("width.ffn_active " + std::to_string(ffn_active) +
                      " out of range [1, " + std::to_string(cfg.ffn_dim) + "]");
  }
  if (attn_active >= 0) {
    if (attn_active < cfg.num_heads || attn_active > cfg.attention_dim()) {
      throw ConfigError("width.attn_active " + std::to_string(attn_active) +
                        " out of range [" + std::to_string(cfg.num_heads) + ", " +
                        std::to_string(cfg.attention_dim()) + "]");
    }
    if (attn_active % cfg.num_heads != 0) {
      throw ConfigError("width.attn_active " + std::to_string(attn_active) +
                        " is not divisible by num_heads " + std::to_string(cfg.num_heads));
    }
  }
}

LayerParams EncoderParams::init_layer(const EncoderConfig& cfg, Rng& rng) {
  int64_t d = cfg.hidden_dim, a = cfg.attention_dim(), f = cfg.ffn_dim;
  LayerParams lp;
  lp.wq = Tensor::randn({d, a}, rng, kInitStd, true);
  lp.wk = Tensor::randn({d, a}, rng, kInitStd, true);
  lp.wv = Tensor::randn({d, a}, rng, kInitStd, true);
  lp.wo = Tensor::randn({a, d}, rng, kInitStd, true);
  lp.ffn_in = Tensor::randn({d, f}, rng, kInitStd, true);
  lp.ffn_out = Tensor::randn({f, d}, rng, kInitStd, true);
  lp.ln1_gain = Tensor::full({d}, 1.0, true);
  lp.ln1_bias = Tensor::zeros({d}, true);
  lp.ln2_gain = Tensor::full({d}, 1.0, true);
  lp.ln2_bias = Tensor::zeros({d}, true);
  return lp;
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  p.token_embeddings = Tensor::randn({cfg.vocab_size, cfg.hidden_dim}, rng, kInitStd, true);
  p.position_embeddings =
      Tensor::randn({cfg.max_seq_len, cfg.hidden_dim}, rng, kInitStd, true);
  p.emb_ln_gain = Tensor::full({cfg.hidden_dim}, 1.0, true);
  p.emb_ln_bias = Tensor::zeros({cfg.hidden_dim}, true);
  for (int64_t l = 0; l < cfg.num_layers; ++l) p.layers.push_back(init_layer(cfg, rng));
  p.mlm_bias = Tensor::zeros({cfg.vocab_size}, true);
  return p;
}

std::vector<Tensor*> EncoderParams::all() {
  std::vector<Tensor*> out{&token_embeddings, &position_embeddings, &emb_ln_gain,
                           &emb_ln_bias};
  for (LayerParams& lp : layers) {
    for (Tensor* t : {&lp.wq, &lp.wk, &lp.wv, &lp.wo, &lp.ffn_in, &lp.ffn_out, &lp.ln1_gain,
                      &lp.ln1_bias, &lp.ln2_gain, &lp.ln2_bias}) {
      out.push_back(t);
    }
  }
  out.push_back(&mlm_bias);
  return out;
}

std::vector<const Tensor*> EncoderParams::all() const {
  auto mut = const_cast<EncoderParams*>(this)->all();
  return {mut.begin(), mut.end()};
}

EncoderParams EncoderParams::clone() const {
  EncoderParams c;
  c.token_embeddings = token_embeddings.clone();
  c.position_embeddings = position_embeddings.clone();
  c.emb_ln_gain = emb_ln_gain.clone();
  c.emb_ln_bias = emb_ln_bias.clone();
  for (const LayerParams& lp : layers) {
    LayerParams lc;
    lc.wq = lp.wq.clone();
    lc.wk = lp.wk.clone();
    lc.wv = lp.wv.clone();
    lc.wo = lp.wo.clone();
    lc.ffn_in = lp.ffn_in.clone();
    lc.ffn_out = lp.ffn_out.clone();
    lc.ln1_gain = lp.ln1_gain.clone();
    lc.ln1_bias = lp.ln1_bias.clone();
    lc.ln2_gain = lp.ln2_gain.clone();
    lc.ln2_bias = lp.ln2_bias.clone();
    c.layers.push_back(std::move(lc));
  }
  c.mlm_bias = mlm_bias.clone();
  return c;
}

void EncoderParams::zero_grads() {
  for (Tensor* t : all()) t->zero_grad();
}

int64_t EncoderParams::total_params() const {
  int64_t n = 0;
  for (const Tensor* t : all()) n += t->numel();
  return n;
}

namespace {

// Column indices of the first (active/H) channels of every head.
std::vector<int64_t> active_head_cols(int64_t stored, int64_t heads, int64_t active) {
  int64_t hd = stored / heads;
  int64_t ha = active / heads;
  std::vector<int64_t> cols;
  cols.reserve(static_cast<size_t>(active));
  for (int64_t h = 0; h < heads; ++h)
    for (int64_t j = 0; j < ha; ++j) cols.push_back(h * hd + j);
  return cols;
}

}  // namespace

Tensor transformer_layer(Tape* tp, const Tensor& x, const LayerParams& lp, int64_t num_heads,
                         const Tensor* attn_mask_bias, int64_t active_attn, int64_t active_ffn,
                         double dropout_p, Rng* dropout_rng, bool train_mode) {
  int64_t stored_attn = lp.wq.dim(1);
  int64_t stored_ffn = lp.ffn_in.dim(1);
  if (active_attn > stored_attn || active_ffn > stored_ffn) {
    throw ConfigError("transformer_layer: active widths exceed stored weights");
  }
  bool use_dropout = train_mode && dropout_p > 0.0 && dropout_rng != nullptr;
  auto maybe_dropout = [&](const Tensor& t) {
    return use_dropout ? dropout(tp, t, dropout_p, *dropout_rng, true) : t;
  };

  bool slice_attn = active_attn < stored_attn;
  std::vector<int64_t> head_cols;
  if (slice_attn) head_cols = active_head_cols(stored_attn, num_heads, active_attn);
  Tensor wq = slice_attn ? gather_cols(tp, lp.wq, head_cols) : lp.wq;
  Tensor wk = slice_attn ? gather_cols(tp, lp.wk, head_cols) : lp.wk;
  Tensor wv = slice_attn ? gather_cols(tp, lp.wv, head_cols) : lp.wv;
  Tensor wo = slice_attn ? gather_rows(tp, lp.wo, head_cols) : lp.wo;
  Tensor q = matmul(tp, x, wq);
  Tensor k = matmul(tp, x, wk);
  Tensor v = matmul(tp, x, wv);

  int64_t ha = active_attn / num_heads;
  std::vector<Tensor> head_ctx;
  head_ctx.reserve(static_cast<size_t>(num_heads));
  // Scaling uses the active per-head width so sliced runs match the
  // standalone thin model exactly.
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(ha));
  for (int64_t h = 0; h < num_heads; ++h) {
    Tensor qh = narrow_cols(tp, q, h * ha, ha);
    Tensor kh = narrow_cols(tp, k, h * ha, ha);
    Tensor vh = narrow_cols(tp, v, h * ha, ha);
    Tensor scores = scale(tp, matmul(tp, qh, transpose(tp, kh)), inv_scale);
    if (attn_mask_bias != nullptr) scores = add(tp, scores, *attn_mask_bias);
    Tensor probs = softmax(tp, scores, 1.0);
    head_ctx.push_back(matmul(tp, probs, vh));
  }
  Tensor ctx = num_heads == 1 ? head_ctx[0] : concat_cols(tp, head_ctx);
  Tensor attn_out = maybe_dropout(matmul(tp, ctx, wo));
  Tensor y = layer_norm(tp, add(tp, x, attn_out), lp.ln1_gain, lp.ln1_bias);

  Tensor fin = active_ffn < stored_ffn ? narrow_cols(tp, lp.ffn_in, 0, active_ffn) : lp.ffn_in;
  Tensor fout = active_ffn < stored_ffn ? narrow_rows(tp, lp.ffn_out, 0, active_ffn)
                                        : lp.ffn_out;
  Tensor ffn = maybe_dropout(matmul(tp, gelu(tp, matmul(tp, y, fin)), fout));
  return layer_norm(tp, add(tp, y, ffn), lp.ln2_gain, lp.ln2_bias);
}

ForwardTrace encoder_forward(Tape* tp, const EncoderParams& params, const EncoderConfig& cfg,
                             const std::vector<int64_t>& token_ids, const WidthSpec& width,
                             Rng* dropout_rng, bool train_mode) {
  cfg.validate();
  width.validate(cfg);
  int64_t t_len = static_cast<int64_t>(token_ids.size());
  if (t_len < 1) throw DataError("encoder_forward: empty input");
  if (t_len > cfg.max_seq_len) {
    throw DataError("encoder_forward: sequence length " + std::to_string(t_len) +
                    " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  for (int64_t id : token_ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw DataError("encoder_forward: unknown token id " + std::to_string(id));
    }
  }
  bool use_dropout = train_mode && cfg.dropout_p > 0.0;
  if (use_dropout && dropout_rng == nullptr) {
    throw ConfigError("encoder_forward: dropout requires an rng in train mode");
  }

  int64_t stored_attn = params.layers.empty() ? cfg.attention_dim() : params.layers[0].wq.dim(1);
  int64_t active_attn = width.attn_active < 0 ? cfg.attention_dim() : width.attn_active;
  int64_t active_ffn = width.ffn_active < 0 ? cfg.ffn_dim : width.ffn_active;
  if (active_attn > stored_attn) {
    throw ConfigError("encoder_forward: attn_active exceeds stored attention width");
  }
  int64_t heads = cfg.num_heads;

  ForwardTrace trace;
  trace.attention_mask.resize(static_cast<size_t>(t_len));
  bool any_pad = false;
  for (int64_t i = 0; i < t_len; ++i) {
    bool real = token_ids[static_cast<size_t>(i)] != kPadId;
    trace.attention_mask[static_cast<size_t>(i)] = real ? 1.0 : 0.0;
    any_pad = any_pad || !real;
  }
  Tensor mask_bias;
  if (any_pad) {
    mask_bias = Tensor::zeros({t_len});
    for (int64_t i = 0; i < t_len; ++i) {
      if (trace.attention_mask[static_cast<size_t>(i)] == 0.0)
        mask_bias.vec()[static_cast<size_t>(i)] = kMaskBias;
    }
  }

  auto maybe_dropout = [&](const Tensor& x) {
    return use_dropout ? dropout(tp, x, cfg.dropout_p, *dropout_rng, true) : x;
  };

  Tensor x = add(tp, embedding(tp, params.token_embeddings, token_ids),
                 narrow_rows(tp, params.position_embeddings, 0, t_len));
  x = layer_norm(tp, x, params.emb_ln_gain, params.emb_ln_bias);
  x = maybe_dropout(x);
  trace.hidden_states.push_back(x);

  for (int64_t l = 0; l < cfg.num_layers; ++l) {
    x = transformer_layer(tp, x, params.layers[static_cast<size_t>(l)], heads,
                          any_pad ? &mask_bias : nullptr, active_attn, active_ffn,
                          cfg.dropout_p, dropout_rng, train_mode);
    trace.hidden_states.push_back(x);
  }
  return trace;
}

Tensor pool(Tape* tp, const Tensor& trace_layer, const std::vector<double>& mask,
            PoolMode mode) {
  if (trace_layer.rank() != 2) {
    throw ConfigError("pool: expected [tokens x dim] tensor, got " +
                      shape_str(trace_layer.shape()));
  }
  if (static_cast<int64_t>(mask.size()) != trace_layer.dim(0)) {
    throw ConfigError("pool: mask length does not match token count");
  }
  bool any_real = false;
  for (double m : mask) any_real = any_real || m != 0.0;
  if (!any_real) throw DataError("pool: input is all padding");
  if (mode == PoolMode::Cls) {
    if (mask[0] == 0.0) throw DataError("pool: CLS position is padding");
    return pick_row(tp, trace_layer, 0);
  }
  return masked_mean_rows(tp, trace_layer, mask);
}

Tensor slice_embedding(Tape* tp, const Tensor& v, int64_t d) {
  if (v.rank() != 1) {
    throw ConfigError("slice_embedding: expected a vector, got " + shape_str(v.shape()));
  }
  if (d < 1 || d > v.dim(0)) {
    throw ConfigError("slice_embedding: d " + std::to_string(d) + " out of range [1, " +
                      std::to_string(v.dim(0)) + "]");
  }
  return narrow_vec(tp, v, 0, d);
}

}  // namespace ladder
