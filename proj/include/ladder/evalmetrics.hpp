// SPDX-License-Identifier: Apache-2.0
//
// Retrieval / STS metrics, the two significance tests, per-entry evaluation
// sweeps with optional hybrid fusion, and the encode+search latency bench.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ladder/data.hpp"
#include "ladder/subnet.hpp"

namespace ladder {

// Rank correlation with average-rank tie handling; throws NumericError on a
// constant input vector.
double spearman(std::span<const double> pred, std::span<const double> gold);

using QueryGains = std::unordered_map<int64_t, double>;  // doc id -> gain

// rankings[q] is the ranked doc-id list for query q; qrels[q] its judgments.
// Queries with no judgments score 0 and are tallied in missing_queries.
double mrr_at_k(const std::vector<std::vector<int64_t>>& rankings,
                const std::vector<QueryGains>& qrels, int64_t k,
                int64_t* missing_queries = nullptr);

// Gain 2^rel - 1, discount log2(rank+1), normalized by the ideal ordering.
double ndcg_at_k(const std::vector<std::vector<int64_t>>& rankings,
                 const std::vector<QueryGains>& qrels, int64_t k,
                 int64_t* missing_queries = nullptr);

// Two-tailed paired Student's t-test; exact 1 when every difference is zero.
double paired_t_test(std::span<const double> a, std::span<const double> b);

// atanh transform of two correlations followed by a two-tailed z-test.
double fisher_z_test(double r1, double r2, int64_t n1, int64_t n2);

// Regularized incomplete beta (exposed for the quadrature cross-checks).
double reg_inc_beta(double a, double b, double x);

struct EvalDataset {
  std::vector<std::string> corpus;
  std::vector<std::string> queries;
  std::vector<int64_t> qrels;  // qrels[qid] = relevant doc id (binary)
  std::vector<StsRecord> sts;
};

struct EvalEntryRow {
  std::string name;
  std::optional<double> mrr10, ndcg10, spearman_r;
  double search_seconds = 0.0;
};

struct EvalReport {
  std::vector<EvalEntryRow> rows;
  std::vector<EvalEntryRow> hybrid_rows;  // present when a width model was given
  double encode_seconds = 0.0;
  int64_t missing_qrels = 0;
  std::string to_tsv() const;
  std::string to_records() const;  // one entry-metric record per line
};

// Per-entry embeddings of a text list; result[entry][text]. Depth-axis
// entries share one full forward per text.
std::vector<std::vector<std::vector<double>>> encode_texts(
    const EncoderParams& params, const EncoderConfig& cfg, const Ladder& ladder,
    PoolMode pool_mode, const Vocab& vocab, const std::vector<std::string>& texts);

// Evaluates every ladder entry; when the width trio is supplied, adds hybrid
// rows fusing the two models' scores per size tier.
EvalReport eval_sweep(const EncoderParams& params, const EncoderConfig& cfg,
                      const Ladder& ladder, PoolMode pool_mode, Metric metric,
                      const Vocab& vocab, const EvalDataset& data, int64_t k = 10,
                      const EncoderParams* width_params = nullptr,
                      const EncoderConfig* width_cfg = nullptr,
                      const Ladder* width_ladder = nullptr);

struct BenchRow {
  std::string name;
  double encode_ms = 0.0, search_ms = 0.0, total_ms = 0.0;
  double pct_of_full = 0.0;
  bool timer_warning = false;  // medians under 10ms are noisy
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::string to_tsv() const;
};

// Encode+search latency per entry against the full entry, medians over
// reps runs. Entries are materialized as standalone thin models so encode
// cost reflects deployment. Search is brute-force dot products at each
// entry's embedding dim.
BenchResult bench_latency(const EncoderParams& params, const EncoderConfig& cfg,
                          const Ladder& ladder, PoolMode pool_mode, int64_t num_queries,
                          int64_t corpus_size, int64_t seq_len, int64_t reps, uint64_t seed);

}  // namespace ladder
