// SPDX-License-Identifier: Apache-2.0

#include "ladder/evalmetrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ladder/errors.hpp"

namespace ladder {

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  size_t n = x.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  size_t n = a.size();
  double ma = 0, mb = 0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double num = 0, va = 0, vb = 0;
  for (size_t i = 0; i < n; ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) {
    throw NumericError("correlation undefined for a constant input vector");
  }
  return num / std::sqrt(va * vb);
}

}  // namespace

double spearman(std::span<const double> pred, std::span<const double> gold) {
  if (pred.size() != gold.size() || pred.size() < 2) {
    throw ConfigError("spearman: need two equal-length vectors of size >= 2");
  }
  std::vector<double> ra = average_ranks(pred);
  std::vector<double> rb = average_ranks(gold);
  return pearson(ra, rb);
}

double mrr_at_k(const std::vector<std::vector<int64_t>>& rankings,
                const std::vector<QueryGains>& qrels, int64_t k, int64_t* missing_queries) {
  if (k < 1) throw ConfigError("mrr_at_k: k must be >= 1");
  if (rankings.size() != qrels.size()) {
    throw ConfigError("mrr_at_k: rankings and qrels differ in query count");
  }
  if (rankings.empty()) throw ConfigError("mrr_at_k: no queries");
  double sum = 0.0;
  int64_t missing = 0;
  for (size_t q = 0; q < rankings.size(); ++q) {
    const QueryGains& gains = qrels[q];
    if (gains.empty()) {
      ++missing;
      continue;
    }
    const auto& ranked = rankings[q];
    int64_t limit = std::min<int64_t>(k, static_cast<int64_t>(ranked.size()));
    for (int64_t r = 0; r < limit; ++r) {
      auto it = gains.find(ranked[static_cast<size_t>(r)]);
      if (it != gains.end() && it->second > 0.0) {
        sum += 1.0 / static_cast<double>(r + 1);
        break;
      }
    }
  }
  if (missing_queries != nullptr) *missing_queries = missing;
  return sum / static_cast<double>(rankings.size());
}

double ndcg_at_k(const std::vector<std::vector<int64_t>>& rankings,
                 const std::vector<QueryGains>& qrels, int64_t k, int64_t* missing_queries) {
  if (k < 1) throw ConfigError("ndcg_at_k: k must be >= 1");
  if (rankings.size() != qrels.size()) {
    throw ConfigError("ndcg_at_k: rankings and qrels differ in query count");
  }
  if (rankings.empty()) throw ConfigError("ndcg_at_k: no queries");
  double sum = 0.0;
  int64_t missing = 0;
  for (size_t q = 0; q < rankings.size(); ++q) {
    const QueryGains& gains = qrels[q];
    if (gains.empty()) {
      ++missing;
      continue;
    }
    for (const auto& [doc, rel] : gains) {
      if (rel < 0.0) throw ConfigError("ndcg_at_k: negative gain for doc " + std::to_string(doc));
    }
    const auto& ranked = rankings[q];
    double dcg = 0.0;
    int64_t limit = std::min<int64_t>(k, static_cast<int64_t>(ranked.size()));
    for (int64_t r = 0; r < limit; ++r) {
      auto it = gains.find(ranked[static_cast<size_t>(r)]);
      if (it != gains.end()) {
        dcg += (std::pow(2.0, it->second) - 1.0) / std::log2(static_cast<double>(r + 2));
      }
    }
    std::vector<double> rels;
    for (const auto& [doc, rel] : gains) rels.push_back(rel);
    std::sort(rels.begin(), rels.end(), std::greater<>());
    double idcg = 0.0;
    for (int64_t r = 0; r < std::min<int64_t>(k, static_cast<int64_t>(rels.size())); ++r) {
      idcg += (std::pow(2.0, rels[static_cast<size_t>(r)]) - 1.0) /
              std::log2(static_cast<double>(r + 2));
    }
    if (idcg > 0.0) sum += dcg / idcg;  // all-zero gains contribute 0
  }
  if (missing_queries != nullptr) *missing_queries = missing;
  return sum / static_cast<double>(rankings.size());
}

// ---- significance tests -----------------------------------------------------

namespace {

// Continued fraction for the incomplete beta (Lentz's method).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ConfigError("paired_t_test: need two equal-length samples of size >= 2");
  }
  size_t n = a.size();
  std::vector<double> diff(n);
  for (size_t i = 0; i < n; ++i) diff[i] = a[i] - b[i];
  double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double d : diff) var += (d - mean) * (d - mean);
  var /= static_cast<double>(n - 1);
  if (var == 0.0) return mean == 0.0 ? 1.0 : 0.0;  // all diffs equal
  double t = mean / std::sqrt(var / static_cast<double>(n));
  double nu = static_cast<double>(n - 1);
  return reg_inc_beta(nu / 2.0, 0.5, nu / (nu + t * t));
}

double fisher_z_test(double r1, double r2, int64_t n1, int64_t n2) {
  if (std::abs(r1) >= 1.0 || std::abs(r2) >= 1.0) {
    throw NumericError("fisher_z_test: correlations must lie strictly inside (-1, 1)");
  }
  if (n1 < 4 || n2 < 4) throw ConfigError("fisher_z_test: sample sizes must be >= 4");
  double z1 = std::atanh(r1);
  double z2 = std::atanh(r2);
  double se = std::sqrt(1.0 / static_cast<double>(n1 - 3) + 1.0 / static_cast<double>(n2 - 3));
  double z = (z1 - z2) / se;
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

// ---- evaluation sweep ---------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Ranked doc ids for one query's scores; ties broken by ascending doc id.
std::vector<int64_t> rank_docs(const std::vector<double>& scores) {
  std::vector<int64_t> ids(scores.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::sort(ids.begin(), ids.end(), [&](int64_t a, int64_t b) {
    double sa = scores[static_cast<size_t>(a)], sb = scores[static_cast<size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  });
  return ids;
}

}  // namespace

std::vector<std::vector<std::vector<double>>> encode_texts(
    const EncoderParams& params, const EncoderConfig& cfg, const Ladder& ladder,
    PoolMode pool_mode, const Vocab& vocab, const std::vector<std::string>& texts) {
  std::vector<std::vector<std::vector<double>>> out(ladder.entries.size());
  for (auto& per_entry : out) per_entry.reserve(texts.size());
  for (const std::string& text : texts) {
    std::vector<int64_t> ids = tokenize(text, vocab, cfg.max_seq_len, false, true);
    if (ladder.axis == Axis::Depth) {
      ForwardTrace trace =
          encoder_forward(nullptr, params, cfg, ids, WidthSpec::full(), nullptr, false);
      for (size_t e = 0; e < ladder.entries.size(); ++e) {
        out[e].push_back(embed_from_trace(nullptr, trace, ladder.entries[e], pool_mode).vec());
      }
    } else {
      for (size_t e = 0; e < ladder.entries.size(); ++e) {
        out[e].push_back(
            embed_subnet(nullptr, params, cfg, ladder.entries[e], ids, pool_mode).vec());
      }
    }
  }
  return out;
}

EvalReport eval_sweep(const EncoderParams& params, const EncoderConfig& cfg,
                      const Ladder& ladder, PoolMode pool_mode, Metric metric,
                      const Vocab& vocab, const EvalDataset& data, int64_t k,
                      const EncoderParams* width_params, const EncoderConfig* width_cfg,
                      const Ladder* width_ladder) {
  ladder.validate(cfg);
  bool hybrid = width_params != nullptr && width_cfg != nullptr && width_ladder != nullptr;
  if (hybrid && width_ladder->entries.size() != ladder.entries.size()) {
    throw ConfigError("eval_sweep: hybrid ladders differ in length");
  }
  bool retrieval = !data.corpus.empty() && !data.queries.empty();
  if (retrieval && data.qrels.size() != data.queries.size()) {
    throw ConfigError("eval_sweep: qrels do not cover the query list");
  }

  EvalReport report;
  auto encode_start = Clock::now();
  std::vector<std::vector<std::vector<double>>> doc_embs, query_embs, wdoc_embs, wquery_embs;
  std::vector<std::vector<std::vector<double>>> sts_a, sts_b, wsts_a, wsts_b;
  if (retrieval) {
    doc_embs = encode_texts(params, cfg, ladder, pool_mode, vocab, data.corpus);
    query_embs = encode_texts(params, cfg, ladder, pool_mode, vocab, data.queries);
    if (hybrid) {
      wdoc_embs = encode_texts(*width_params, *width_cfg, *width_ladder, pool_mode, vocab,
                               data.corpus);
      wquery_embs = encode_texts(*width_params, *width_cfg, *width_ladder, pool_mode, vocab,
                                 data.queries);
    }
  }
  if (!data.sts.empty()) {
    std::vector<std::string> a_texts, b_texts;
    for (const StsRecord& r : data.sts) {
      a_texts.push_back(r.sentence_a);
      b_texts.push_back(r.sentence_b);
    }
    sts_a = encode_texts(params, cfg, ladder, pool_mode, vocab, a_texts);
    sts_b = encode_texts(params, cfg, ladder, pool_mode, vocab, b_texts);
  }
  report.encode_seconds = seconds_since(encode_start);

  std::vector<QueryGains> qrels;
  if (retrieval) {
    qrels.resize(data.queries.size());
    for (size_t q = 0; q < data.qrels.size(); ++q) qrels[q][data.qrels[q]] = 1.0;
  }

  auto score_and_rank = [&](const std::vector<std::vector<double>>& queries,
                            const std::vector<std::vector<double>>& docs,
                            const std::vector<std::vector<double>>* wqueries,
                            const std::vector<std::vector<double>>* wdocs) {
    std::vector<std::vector<int64_t>> rankings;
    rankings.reserve(queries.size());
    for (size_t q = 0; q < queries.size(); ++q) {
      std::vector<double> scores(docs.size());
      for (size_t d = 0; d < docs.size(); ++d) {
        if (wqueries != nullptr) {
          scores[d] = hybrid_score(queries[q], docs[d], (*wqueries)[q], (*wdocs)[d], metric);
        } else {
          scores[d] = similarity(queries[q], docs[d], metric);
        }
      }
      rankings.push_back(rank_docs(scores));
    }
    return rankings;
  };

  for (size_t e = 0; e < ladder.entries.size(); ++e) {
    EvalEntryRow row;
    row.name = ladder.entries[e].name;
    if (retrieval) {
      auto search_start = Clock::now();
      auto rankings = score_and_rank(query_embs[e], doc_embs[e], nullptr, nullptr);
      row.search_seconds = seconds_since(search_start);
      int64_t missing = 0;
      row.mrr10 = mrr_at_k(rankings, qrels, k, &missing);
      row.ndcg10 = ndcg_at_k(rankings, qrels, k);
      report.missing_qrels += missing;
    }
    if (!data.sts.empty()) {
      std::vector<double> pred, gold;
      for (size_t i = 0; i < data.sts.size(); ++i) {
        pred.push_back(similarity(sts_a[e][i], sts_b[e][i], Metric::Cosine));
        gold.push_back(data.sts[i].score);
      }
      row.spearman_r = spearman(pred, gold);
    }
    report.rows.push_back(std::move(row));

    if (hybrid && retrieval) {
      EvalEntryRow hrow;
      hrow.name = ladder.entries[e].name;
      auto search_start = Clock::now();
      auto rankings =
          score_and_rank(query_embs[e], doc_embs[e], &wquery_embs[e], &wdoc_embs[e]);
      hrow.search_seconds = seconds_since(search_start);
      hrow.mrr10 = mrr_at_k(rankings, qrels, k);
      hrow.ndcg10 = ndcg_at_k(rankings, qrels, k);
      report.hybrid_rows.push_back(std::move(hrow));
    }
  }
  return report;
}

namespace {

std::string fmt_opt(const std::optional<double>& v) {
  if (!v.has_value()) return "-";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << *v;
  return os.str();
}

}  // namespace

std::string EvalReport::to_tsv() const {
  std::ostringstream os;
  os << "entry\tmrr@10\tndcg@10\tspearman\tsearch_seconds\n";
  for (const EvalEntryRow& r : rows) {
    os << r.name << '\t' << fmt_opt(r.mrr10) << '\t' << fmt_opt(r.ndcg10) << '\t'
       << fmt_opt(r.spearman_r) << '\t' << r.search_seconds << '\n';
  }
  for (const EvalEntryRow& r : hybrid_rows) {
    os << r.name << "+hybrid\t" << fmt_opt(r.mrr10) << '\t' << fmt_opt(r.ndcg10) << "\t-\t"
       << r.search_seconds << '\n';
  }
  return os.str();
}

std::string EvalReport::to_records() const {
  std::ostringstream os;
  os.precision(10);
  auto emit = [&](const std::string& entry, const std::string& metric, double value) {
    os << entry << '\t' << metric << '\t' << value << '\n';
  };
  for (const EvalEntryRow& r : rows) {
    if (r.mrr10) emit(r.name, "mrr10", *r.mrr10);
    if (r.ndcg10) emit(r.name, "ndcg10", *r.ndcg10);
    if (r.spearman_r) emit(r.name, "spearman", *r.spearman_r);
  }
  for (const EvalEntryRow& r : hybrid_rows) {
    if (r.mrr10) emit(r.name + "+hybrid", "mrr10", *r.mrr10);
    if (r.ndcg10) emit(r.name + "+hybrid", "ndcg10", *r.ndcg10);
  }
  return os.str();
}

// ---- latency bench ------------------------------------------------------------

BenchResult bench_latency(const EncoderParams& params, const EncoderConfig& cfg,
                          const Ladder& ladder, PoolMode pool_mode, int64_t num_queries,
                          int64_t corpus_size, int64_t seq_len, int64_t reps, uint64_t seed) {
  ladder.validate(cfg);
  if (num_queries < 1 || corpus_size < 1 || reps < 1) {
    throw ConfigError("bench_latency: sizes and reps must be >= 1");
  }
  seq_len = std::min(seq_len, cfg.max_seq_len);

  Rng rng(seed, "bench");
  auto random_seq = [&]() {
    std::vector<int64_t> ids{kClsId};
    for (int64_t i = 1; i < seq_len; ++i) {
      ids.push_back(kUnkId + 1 + rng.uniform_int(cfg.vocab_size - kUnkId - 1));
    }
    return ids;
  };
  std::vector<std::vector<int64_t>> query_ids, corpus_ids;
  for (int64_t i = 0; i < num_queries; ++i) query_ids.push_back(random_seq());
  for (int64_t i = 0; i < corpus_size; ++i) corpus_ids.push_back(random_seq());

  BenchResult result;
  double full_total = 0.0;
  for (const LadderEntry& entry : ladder.entries) {
    auto [thin, thin_cfg] = materialize_thin(params, cfg, entry);
    LadderEntry thin_entry{entry.name, thin_cfg.num_layers, WidthSpec::full(), entry.embed_dim};

    // corpus embeddings are precomputed offline, not timed
    Tensor corpus_mat = Tensor::zeros({corpus_size, entry.embed_dim});
    for (int64_t d = 0; d < corpus_size; ++d) {
      Tensor emb = embed_subnet(nullptr, thin, thin_cfg, thin_entry,
                                corpus_ids[static_cast<size_t>(d)], pool_mode);
      std::copy(emb.vec().begin(), emb.vec().end(),
                corpus_mat.data() + d * entry.embed_dim);
    }
    Tensor corpus_t = transpose(nullptr, corpus_mat);

    std::vector<double> encode_ms, search_ms;
    for (int64_t rep = 0; rep < reps; ++rep) {
      auto t0 = std::chrono::steady_clock::now();
      Tensor queries = Tensor::zeros({num_queries, entry.embed_dim});
      for (int64_t q = 0; q < num_queries; ++q) {
        Tensor emb = embed_subnet(nullptr, thin, thin_cfg, thin_entry,
                                  query_ids[static_cast<size_t>(q)], pool_mode);
        std::copy(emb.vec().begin(), emb.vec().end(), queries.data() + q * entry.embed_dim);
      }
      auto t1 = std::chrono::steady_clock::now();
      Tensor scores = matmul(nullptr, queries, corpus_t);
      // top-10 selection per query, part of the measured search cost
      double sink = 0.0;
      for (int64_t q = 0; q < num_queries; ++q) {
        std::vector<double> row(scores.data() + q * corpus_size,
                                scores.data() + (q + 1) * corpus_size);
        std::partial_sort(row.begin(), row.begin() + std::min<int64_t>(10, corpus_size),
                          row.end(), std::greater<>());
        sink += row[0];
      }
      auto t2 = std::chrono::steady_clock::now();
      if (!std::isfinite(sink)) throw NumericError("bench_latency: non-finite scores");
      encode_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      search_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
    }
    auto median = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      return v[v.size() / 2];
    };
    BenchRow row;
    row.name = entry.name;
    row.encode_ms = median(encode_ms);
    row.search_ms = median(search_ms);
    row.total_ms = row.encode_ms + row.search_ms;
    row.timer_warning = row.total_ms < 10.0;
    result.rows.push_back(row);
    if (&entry == &ladder.entries.back()) full_total = row.total_ms;
  }
  for (BenchRow& row : result.rows) {
    row.pct_of_full = full_total > 0.0 ? 100.0 * row.total_ms / full_total : 0.0;
  }
  return result;
}

std::string BenchResult::to_tsv() const {
  std::ostringstream os;
  os << "entry\tencode_ms\tsearch_ms\ttotal_ms\tpct_of_full\ttimer_warning\n";
  for (const BenchRow& r : rows) {
    os << r.name << '\t' << r.encode_ms << '\t' << r.search_ms << '\t' << r.total_ms << '\t'
       << r.pct_of_full << '\t' << (r.timer_warning ? "yes" : "no") << '\n';
  }
  return os.str();
}

}  // namespace ladder
