// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include <cmath>
#include <vector>

#include "ladder/errors.hpp"
#include "ladder/subnet.hpp"

using namespace ladder;

namespace {

EncoderConfig base_config() {
  EncoderConfig cfg;
  cfg.vocab_size = 30522;
  cfg.max_seq_len = 512;
  cfg.num_layers = 12;
  cfg.hidden_dim = 768;
  cfg.num_heads = 12;
  cfg.ffn_dim = 3072;
  return cfg;
}

EncoderConfig toy_config() {
  EncoderConfig cfg;
  cfg.vocab_size = 40;
  cfg.max_seq_len = 16;
  cfg.num_layers = 6;
  cfg.hidden_dim = 64;
  cfg.num_heads = 4;
  cfg.ffn_dim = 192;
  return cfg;
}

}  // namespace

TEST_CASE("default depth ladder for the 12x768 base") {
  Ladder l = default_ladder(base_config(), Axis::Depth);
  REQUIRE(l.entries.size() == 6);
  std::vector<std::pair<int64_t, int64_t>> expect{{2, 32},  {4, 64},   {6, 128},
                                                  {8, 256}, {10, 512}, {12, 768}};
  std::vector<std::string> names{"Demi", "Short", "Tall", "Grande", "Venti", "Trenta"};
  for (size_t i = 0; i < 6; ++i) {
    CHECK(l.entries[i].name == names[i]);
    CHECK(l.entries[i].depth_n == expect[i].first);
    CHECK(l.entries[i].embed_dim == expect[i].second);
    CHECK(l.entries[i].width.is_full());
  }
}

TEST_CASE("default width ladder for the 12x768 base") {
  Ladder l = default_ladder(base_config(), Axis::Width);
  REQUIRE(l.entries.size() == 6);
  std::vector<int64_t> ffn{512, 1024, 1536, 2048, 2560, 3072};
  std::vector<int64_t> attn{132, 252, 384, 516, 636, 768};
  for (size_t i = 0; i < 6; ++i) {
    CHECK(l.entries[i].depth_n == 12);
    CHECK(l.entries[i].width.ffn_active == ffn[i]);
    CHECK(l.entries[i].width.attn_active == attn[i]);
  }
}

TEST_CASE("default depth ladder for a toy config follows d_i = D/2^(6-i)") {
  Ladder l = default_ladder(toy_config(), Axis::Depth);
  std::vector<std::pair<int64_t, int64_t>> expect{{1, 2},  {2, 4},  {3, 8},
                                                  {4, 16}, {5, 32}, {6, 64}};
  for (size_t i = 0; i < 6; ++i) {
    CHECK(l.entries[i].depth_n == expect[i].first);
    CHECK(l.entries[i].embed_dim == expect[i].second);
  }
}

TEST_CASE("indivisible configs are rejected with a hint") {
  EncoderConfig cfg = toy_config();
  cfg.num_layers = 5;
  CHECK_THROWS_WITH_AS(default_ladder(cfg, Axis::Depth), doctest::Contains("explicit ladder"),
                       ConfigError);
  cfg = toy_config();
  cfg.ffn_dim = 100;
  CHECK_THROWS_AS(default_ladder(cfg, Axis::Width), ConfigError);
}

TEST_CASE("ladder validation rejects broken ladders") {
  EncoderConfig cfg = toy_config();
  Ladder l = default_ladder(cfg, Axis::Depth);
  std::swap(l.entries[0], l.entries[1]);
  CHECK_THROWS_AS(l.validate(cfg), ConfigError);

  Ladder l2 = default_ladder(cfg, Axis::Depth);
  l2.entries.pop_back();  // last entry no longer full
  CHECK_THROWS_AS(l2.validate(cfg), ConfigError);
}

TEST_CASE("embed_subnet: full entry equals plain forward + pool + slice") {
  EncoderConfig cfg = toy_config();
  Rng rng(21, "init");
  EncoderParams p = EncoderParams::init(cfg, rng);
  Ladder l = default_ladder(cfg, Axis::Depth);
  std::vector<int64_t> ids{kClsId, 5, 6, 7, 8};

  Tensor via_entry = embed_subnet(nullptr, p, cfg, l.entries.back(), ids, PoolMode::Mean);
  ForwardTrace trace = encoder_forward(nullptr, p, cfg, ids, WidthSpec::full(), nullptr, false);
  Tensor direct = slice_embedding(
      nullptr, pool(nullptr, trace.hidden_states.back(), trace.attention_mask, PoolMode::Mean),
      cfg.hidden_dim);
  CHECK(via_entry.vec() == direct.vec());
}

TEST_CASE("embed_subnet: smallest entry equals manual compose") {
  EncoderConfig cfg = toy_config();
  Rng rng(22, "init");
  EncoderParams p = EncoderParams::init(cfg, rng);
  Ladder l = default_ladder(cfg, Axis::Depth);
  const LadderEntry& demi = l.entries[0];
  std::vector<int64_t> ids{kClsId, 10, 11};

  Tensor via_entry = embed_subnet(nullptr, p, cfg, demi, ids, PoolMode::Cls);
  ForwardTrace trace = encoder_forward(nullptr, p, cfg, ids, WidthSpec::full(), nullptr, false);
  Tensor manual = slice_embedding(
      nullptr,
      pool(nullptr, trace.hidden_states[static_cast<size_t>(demi.depth_n)],
           trace.attention_mask, PoolMode::Cls),
      demi.embed_dim);
  CHECK(via_entry.vec() == manual.vec());
}

TEST_CASE("materialize_thin: depth entries match bitwise, width entries to 1e-9") {
  EncoderConfig cfg = toy_config();
  Rng rng(23, "init");
  EncoderParams p = EncoderParams::init(cfg, rng);
  Rng data_rng(24, "ids");

  for (Axis axis : {Axis::Depth, Axis::Width}) {
    Ladder l = default_ladder(cfg, axis);
    for (const LadderEntry& e : l.entries) {
      auto [thin, thin_cfg] = materialize_thin(p, cfg, e);
      for (int rep = 0; rep < 5; ++rep) {
        std::vector<int64_t> ids{kClsId};
        int64_t len = 3 + data_rng.uniform_int(6);
        for (int64_t i = 0; i < len; ++i)
          ids.push_back(kUnkId + 1 + data_rng.uniform_int(cfg.vocab_size - kUnkId - 1));

        Tensor sliced = embed_subnet(nullptr, p, cfg, e, ids, PoolMode::Mean);
        LadderEntry thin_entry{e.name, e.depth_n, WidthSpec::full(), e.embed_dim};
        Tensor standalone = embed_subnet(nullptr, thin, thin_cfg, thin_entry, ids, PoolMode::Mean);
        REQUIRE(sliced.numel() == standalone.numel());
        for (int64_t i = 0; i < sliced.numel(); ++i) {
          if (axis == Axis::Depth) {
            CHECK(sliced.vec()[i] == standalone.vec()[i]);  // bitwise
          } else {
            CHECK(std::abs(sliced.vec()[i] - standalone.vec()[i]) <= 1e-9);
          }
        }
      }
    }
  }
}

TEST_CASE("materialize_thin full entry is a verbatim copy") {
  EncoderConfig cfg = toy_config();
  Rng rng(25, "init");
  EncoderParams p = EncoderParams::init(cfg, rng);
  LadderEntry full{"Trenta", cfg.num_layers, WidthSpec::full(), cfg.hidden_dim};
  auto [thin, thin_cfg] = materialize_thin(p, cfg, full);
  CHECK(thin_cfg.num_layers == cfg.num_layers);
  CHECK(thin.token_embeddings.vec() == p.token_embeddings.vec());
  CHECK(thin.layers[2].ffn_in.vec() == p.layers[2].ffn_in.vec());
}

TEST_CASE("hybrid_score basics") {
  std::vector<double> a{1.0, 0.0}, b{0.5, 0.5};
  // identical branches -> same score as either alone
  CHECK(hybrid_score(a, b, a, b, Metric::Dot) == doctest::Approx(similarity(a, b, Metric::Dot)));

  // branch scores 0.2 and 0.4 -> 0.3 (construct vectors with those dots)
  std::vector<double> q{1.0}, p1{0.2}, p2{0.4};
  CHECK(hybrid_score(q, p1, q, p2, Metric::Dot) == doctest::Approx(0.3));

  std::vector<double> short_vec{1.0};
  CHECK_THROWS_AS(hybrid_score(a, b, short_vec, short_vec, Metric::Dot), ConfigError);
}

TEST_CASE("hybrid ranking equals concatenated-embedding dot ranking") {
  // With dot-product branch scores, the hybrid mean is half the dot product
  // of concatenated embeddings, so argsorts agree. Brute-force over random
  // candidate sets.
  Rng rng(26, "hybrid");
  for (int rep = 0; rep < 50; ++rep) {
    int64_t d = 1 + rng.uniform_int(6);
    int64_t num_candidates = 2 + rng.uniform_int(8);
    std::vector<double> qd(static_cast<size_t>(d)), qw(static_cast<size_t>(d));
    for (auto& v : qd) v = rng.uniform(-1, 1);
    for (auto& v : qw) v = rng.uniform(-1, 1);
    std::vector<std::vector<double>> pd(static_cast<size_t>(num_candidates)),
        pw(static_cast<size_t>(num_candidates));
    int best_hybrid = 0, best_concat = 0;
    double best_hybrid_score = -1e300, best_concat_score = -1e300;
    for (int c = 0; c < num_candidates; ++c) {
      pd[static_cast<size_t>(c)].resize(static_cast<size_t>(d));
      pw[static_cast<size_t>(c)].resize(static_cast<size_t>(d));
      for (auto& v : pd[static_cast<size_t>(c)]) v = rng.uniform(-1, 1);
      for (auto& v : pw[static_cast<size_t>(c)]) v = rng.uniform(-1, 1);
      double h = hybrid_score(qd, pd[static_cast<size_t>(c)], qw, pw[static_cast<size_t>(c)],
                              Metric::Dot);
      double concat = 0.0;
      for (int64_t i = 0; i < d; ++i) {
        concat += qd[static_cast<size_t>(i)] * pd[static_cast<size_t>(c)][static_cast<size_t>(i)];
        concat += qw[static_cast<size_t>(i)] * pw[static_cast<size_t>(c)][static_cast<size_t>(i)];
      }
      if (h > best_hybrid_score) {
        best_hybrid_score = h;
        best_hybrid = c;
      }
      if (concat > best_concat_score) {
        best_concat_score = concat;
        best_concat = c;
      }
    }
    CHECK(best_hybrid == best_concat);
  }
}

TEST_CASE("hybrid argmax invariant to shared positive scaling") {
  Rng rng(27, "hybrid2");
  std::vector<double> qd{0.3, -0.2}, qw{0.1, 0.9};
  std::vector<std::vector<double>> pd{{1, 0}, {0, 1}, {0.5, 0.5}};
  std::vector<std::vector<double>> pw{{0, 1}, {1, 0}, {0.2, 0.8}};
  auto argmax = [&](double c) {
    int best = 0;
    double best_score = -1e300;
    for (int i = 0; i < 3; ++i) {
      std::vector<double> sd = pd[static_cast<size_t>(i)], sw = pw[static_cast<size_t>(i)];
      for (auto& v : sd) v *= c;
      for (auto& v : sw) v *= c;
      double h = hybrid_score(qd, sd, qw, sw, Metric::Dot);
      if (h > best_score) {
        best_score = h;
        best = i;
      }
    }
    return best;
  };
  CHECK(argmax(1.0) == argmax(7.5));
  CHECK(argmax(1.0) == argmax(0.01));
}

TEST_CASE("parameter parity of paired depth/width entries on the 12x768 base") {
  EncoderConfig cfg = base_config();
  Ladder depth = default_ladder(cfg, Axis::Depth);
  Ladder width = default_ladder(cfg, Axis::Width);
  // Six separately deployed models would hold the whole depth ladder's
  // parameters; pair differences are quoted against that footprint.
  int64_t footprint = 0;
  for (const LadderEntry& e : depth.entries) footprint += entry_param_count(cfg, e);
  for (size_t i = 0; i < 6; ++i) {
    int64_t pd = entry_param_count(cfg, depth.entries[i]);
    int64_t pw = entry_param_count(cfg, width.entries[i]);
    int64_t diff = std::abs(pd - pw);
    CHECK(diff < 200000);  // under 0.2M parameters
    CHECK(static_cast<double>(diff) / static_cast<double>(footprint) < 5e-4);
  }
}
