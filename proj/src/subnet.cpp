// SPDX-License-Identifier: Apache-2.0

#include "ladder/subnet.hpp"

#include <cmath>

#include "ladder/errors.hpp"

namespace ladder {

const char* const kTierNames[6] = {"Demi", "Short", "Tall", "Grande", "Venti", "Trenta"};

Axis axis_from_string(const std::string& s) {
  if (s == "depth") return Axis::Depth;
  if (s == "width") return Axis::Width;
  throw ConfigError("unknown ladder axis '" + s + "' (expected depth|width)");
}

std::string axis_to_string(Axis a) { return a == Axis::Depth ? "depth" : "width"; }

Metric metric_from_string(const std::string& s) {
  if (s == "dot") return Metric::Dot;
  if (s == "cosine") return Metric::Cosine;
  throw ConfigError("unknown metric '" + s + "' (expected dot|cosine)");
}

std::string metric_to_string(Metric m) { return m == Metric::Dot ? "dot" : "cosine"; }

void Ladder::validate(const EncoderConfig& cfg) const {
  if (entries.empty()) throw ConfigError("ladder: no entries");
  for (const LadderEntry& e : entries) {
    if (e.depth_n < 1 || e.depth_n > cfg.num_layers) {
      throw ConfigError("ladder entry '" + e.name + "': depth " + std::to_string(e.depth_n) +
                        " out of range [1, " + std::to_string(cfg.num_layers) + "]");
    }
    if (e.embed_dim < 1 || e.embed_dim > cfg.hidden_dim) {
      throw ConfigError("ladder entry '" + e.name + "': embed_dim " +
                        std::to_string(e.embed_dim) + " out of range [1, " +
                        std::to_string(cfg.hidden_dim) + "]");
    }
    e.width.validate(cfg);
    if (axis == Axis::Depth && !e.width.is_full()) {
      throw ConfigError("ladder entry '" + e.name + "': depth axis requires full width");
    }
    if (axis == Axis::Width && e.depth_n != cfg.num_layers) {
      throw ConfigError("ladder entry '" + e.name + "': width axis fixes depth at " +
                        std::to_string(cfg.num_layers));
    }
  }
  auto active_ffn = [&](const LadderEntry& e) {
    return e.width.ffn_active < 0 ? cfg.ffn_dim : e.width.ffn_active;
  };
  auto active_attn = [&](const LadderEntry& e) {
    return e.width.attn_active < 0 ? cfg.attention_dim() : e.width.attn_active;
  };
  for (size_t i = 1; i < entries.size(); ++i) {
    const LadderEntry& a = entries[i - 1];
    const LadderEntry& b = entries[i];
    bool ok = a.embed_dim < b.embed_dim;
    if (axis == Axis::Depth) {
      ok = ok && a.depth_n < b.depth_n;
    } else {
      ok = ok && active_ffn(a) < active_ffn(b) && active_attn(a) < active_attn(b);
    }
    if (!ok) {
      throw ConfigError("ladder: entries '" + a.name + "' and '" + b.name +
                        "' are not strictly increasing");
    }
  }
  const LadderEntry& last = entries.back();
  bool last_full = last.depth_n == cfg.num_layers && last.embed_dim == cfg.hidden_dim &&
                   active_ffn(last) == cfg.ffn_dim && active_attn(last) == cfg.attention_dim();
  if (!last_full) throw ConfigError("ladder: the last entry must be the full model");
}

namespace {

int64_t nearest_multiple(int64_t value, int64_t base) {
  return std::llround(static_cast<double>(value) / static_cast<double>(base)) * base;
}

bool is_standard_base(const EncoderConfig& cfg) {
  return cfg.num_layers == 12 && cfg.hidden_dim == 768 && cfg.num_heads == 12 &&
         cfg.ffn_dim == 3072;
}

}  // namespace

Ladder default_ladder(const EncoderConfig& cfg, Axis axis) {
  cfg.validate();
  constexpr int64_t kRungs = 6;
  const std::string hint = "; define an explicit ladder in the run config instead";
  if (cfg.num_layers % kRungs != 0) {
    throw ConfigError("default ladder needs num_layers divisible by 6, got " +
                      std::to_string(cfg.num_layers) + hint);
  }

  // Embedding dims follow d_i = D / 2^(6-i); the standard 12x768 base model
  // is pinned to its established tier dims, which do not follow that curve
  // at the small end.
  std::vector<int64_t> dims(kRungs);
  if (is_standard_base(cfg)) {
    dims = {32, 64, 128, 256, 512, 768};
  } else {
    if (cfg.hidden_dim % 32 != 0) {
      throw ConfigError("default ladder needs hidden_dim divisible by 32, got " +
                        std::to_string(cfg.hidden_dim) + hint);
    }
    for (int64_t i = 1; i <= kRungs; ++i)
      dims[static_cast<size_t>(i - 1)] = cfg.hidden_dim >> (kRungs - i);
  }

  Ladder ladder;
  ladder.axis = axis;
  if (axis == Axis::Depth) {
    for (int64_t i = 1; i <= kRungs; ++i) {
      ladder.entries.push_back(LadderEntry{kTierNames[i - 1], cfg.num_layers / kRungs * i,
                                           WidthSpec::full(), dims[static_cast<size_t>(i - 1)]});
    }
  } else {
    if (cfg.ffn_dim % kRungs != 0) {
      throw ConfigError("default width ladder needs ffn_dim divisible by 6, got " +
                        std::to_string(cfg.ffn_dim) + hint);
    }
    for (int64_t i = 1; i <= kRungs; ++i) {
      int64_t ffn = cfg.ffn_dim / kRungs * i;
      int64_t attn = i == kRungs
                         ? cfg.attention_dim()
                         : nearest_multiple(cfg.attention_dim() * i / kRungs, cfg.num_heads);
      attn = std::max<int64_t>(cfg.num_heads, std::min(attn, cfg.attention_dim()));
      ladder.entries.push_back(LadderEntry{kTierNames[i - 1], cfg.num_layers,
                                           WidthSpec{ffn, attn},
                                           dims[static_cast<size_t>(i - 1)]});
    }
  }
  ladder.validate(cfg);
  return ladder;
}

Tensor embed_from_trace(Tape* tp, const ForwardTrace& trace, const LadderEntry& entry,
                        PoolMode mode) {
  if (entry.depth_n < 1 ||
      entry.depth_n >= static_cast<int64_t>(trace.hidden_states.size())) {
    throw ConfigError("embed_from_trace: entry depth " + std::to_string(entry.depth_n) +
                      " not present in trace");
  }
  Tensor pooled = pool(tp, trace.hidden_states[static_cast<size_t>(entry.depth_n)],
                       trace.attention_mask, mode);
  return slice_embedding(tp, pooled, entry.embed_dim);
}

Tensor embed_subnet(Tape* tp, const EncoderParams& params, const EncoderConfig& cfg,
                    const LadderEntry& entry, const std::vector<int64_t>& token_ids,
                    PoolMode mode, Rng* dropout_rng, bool train_mode) {
  ForwardTrace trace =
      encoder_forward(tp, params, cfg, token_ids, entry.width, dropout_rng, train_mode);
  return embed_from_trace(tp, trace, entry, mode);
}

std::pair<EncoderParams, EncoderConfig> materialize_thin(const EncoderParams& params,
                                                         const EncoderConfig& cfg,
                                                         const LadderEntry& entry) {
  cfg.validate();
  entry.width.validate(cfg);
  int64_t active_attn =
      entry.width.attn_active < 0 ? cfg.attention_dim() : entry.width.attn_active;
  int64_t active_ffn = entry.width.ffn_active < 0 ? cfg.ffn_dim : entry.width.ffn_active;

  EncoderConfig thin_cfg = cfg;
  thin_cfg.num_layers = entry.depth_n;
  thin_cfg.ffn_dim = active_ffn;
  thin_cfg.attn_dim = active_attn;

  std::vector<int64_t> head_cols;
  int64_t hd = cfg.attention_dim() / cfg.num_heads;
  int64_t ha = active_attn / cfg.num_heads;
  for (int64_t h = 0; h < cfg.num_heads; ++h)
    for (int64_t j = 0; j < ha; ++j) head_cols.push_back(h * hd + j);

  EncoderParams thin;
  thin.token_embeddings = params.token_embeddings.clone();
  thin.position_embeddings = params.position_embeddings.clone();
  thin.emb_ln_gain = params.emb_ln_gain.clone();
  thin.emb_ln_bias = params.emb_ln_bias.clone();
  for (int64_t l = 0; l < entry.depth_n; ++l) {
    const LayerParams& src = params.layers[static_cast<size_t>(l)];
    LayerParams dst;
    if (active_attn == cfg.attention_dim()) {
      dst.wq = src.wq.clone();
      dst.wk = src.wk.clone();
      dst.wv = src.wv.clone();
      dst.wo = src.wo.clone();
    } else {
      dst.wq = gather_cols(nullptr, src.wq, head_cols);
      dst.wk = gather_cols(nullptr, src.wk, head_cols);
      dst.wv = gather_cols(nullptr, src.wv, head_cols);
      dst.wo = gather_rows(nullptr, src.wo, head_cols);
    }
    if (active_ffn == cfg.ffn_dim) {
      dst.ffn_in = src.ffn_in.clone();
      dst.ffn_out = src.ffn_out.clone();
    } else {
      dst.ffn_in = narrow_cols(nullptr, src.ffn_in, 0, active_ffn);
      dst.ffn_out = narrow_rows(nullptr, src.ffn_out, 0, active_ffn);
    }
    dst.ln1_gain = src.ln1_gain.clone();
    dst.ln1_bias = src.ln1_bias.clone();
    dst.ln2_gain = src.ln2_gain.clone();
    dst.ln2_bias = src.ln2_bias.clone();
    thin.layers.push_back(std::move(dst));
  }
  thin.mlm_bias = params.mlm_bias.clone();
  return {std::move(thin), thin_cfg};
}

double similarity(std::span<const double> a, std::span<const double> b, Metric metric) {
  if (a.size() != b.size()) {
    throw ConfigError("similarity: dimension mismatch " + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()));
  }
  double dot = 0.0;
  for (size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  if (metric == Metric::Dot) return dot;
  double na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("similarity: zero vector under cosine");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double hybrid_score(std::span<const double> q_depth, std::span<const double> p_depth,
                    std::span<const double> q_width, std::span<const double> p_width,
                    Metric metric) {
  if (q_depth.size() != q_width.size()) {
    throw ConfigError("hybrid_score: branches use different embedding dims (" +
                      std::to_string(q_depth.size()) + " vs " +
                      std::to_string(q_width.size()) + ")");
  }
  return 0.5 * (similarity(q_depth, p_depth, metric) + similarity(q_width, p_width, metric));
}

int64_t entry_param_count(const EncoderConfig& cfg, const LadderEntry& entry) {
  int64_t d = cfg.hidden_dim;
  int64_t a = entry.width.attn_active < 0 ? cfg.attention_dim() : entry.width.attn_active;
  int64_t f = entry.width.ffn_active < 0 ? cfg.ffn_dim : entry.width.ffn_active;
  int64_t embeddings = cfg.vocab_size * d + cfg.max_seq_len * d + 2 * d;
  int64_t per_layer = 3 * d * a + a * d + d * f + f * d + 4 * d;
  return embeddings + entry.depth_n * per_layer;
}

}  // namespace ladder
