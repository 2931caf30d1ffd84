// SPDX-License-Identifier: Apache-2.0
//
// Whitespace tokenization over a closed vocabulary, synthetic
// topic-clustered retrieval / STS task generation, dataset file formats,
// and contrastive batch assembly.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ladder/encoder.hpp"
#include "ladder/rng.hpp"

namespace ladder {

struct Vocab {
  std::vector<std::string> id_to_token;  // reserved ids 0..3 then words
  std::unordered_map<std::string, int64_t> token_to_id;

  static Vocab from_words(const std::vector<std::string>& words);
  int64_t id(const std::string& token) const;  // kUnkId when missing
  const std::string& token(int64_t id) const;
  int64_t size() const { return static_cast<int64_t>(id_to_token.size()); }

  bool operator==(const Vocab& o) const { return id_to_token == o.id_to_token; }
};

// CLS-prefixed whitespace tokenization, truncated to max_seq_len; optionally
// padded to max_seq_len with PAD. Empty text is only legal when allow_empty
// (evaluation inputs), producing a lone CLS.
std::vector<int64_t> tokenize(const std::string& text, const Vocab& vocab,
                              int64_t max_seq_len, bool pad_to_max = false,
                              bool allow_empty = false);
std::string detokenize(std::span<const int64_t> ids, const Vocab& vocab);

struct StsRecord {
  std::string sentence_a, sentence_b;
  double score = 0.0;  // [0, 5]
};

struct RetrievalRecord {
  std::string query, positive;
  std::vector<std::string> hard_negatives;
};

struct SyntheticTaskSpec {
  int64_t vocab_size = 256;        // includes the 4 reserved ids
  int64_t num_topics = 10;
  int64_t docs_per_topic = 20;
  int64_t sentence_len_min = 6;
  int64_t sentence_len_max = 12;
  double noise_rate = 0.2;         // word dropout / swap probability
  int64_t queries_per_doc = 2;     // training paraphrases per document
  int64_t hard_negatives = 7;      // same-topic negatives per query
  int64_t num_eval_queries = 100;
  int64_t num_sts_pairs = 200;
  uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  Vocab vocab;
  std::vector<std::string> corpus;  // document id = line index
  std::vector<RetrievalRecord> train_records;
  std::vector<StsRecord> sts_records;
  std::vector<std::string> eval_queries;  // query id = index
  std::vector<int64_t> eval_qrels;        // eval_qrels[qid] = relevant doc id
};

// Pure function of the spec (including its seed).
SyntheticData gen_synthetic(const SyntheticTaskSpec& spec);

// File formats:
//   STS:       score<TAB>sentence_a<TAB>sentence_b
//   retrieval: one JSON object per line {"query","positive","negatives"}
//   corpus:    one document per line (UTF-8)
//   qrels:     qid<SP>0<SP>docid<SP>rel
std::vector<StsRecord> load_sts(const std::string& path);
std::vector<RetrievalRecord> load_retrieval(const std::string& path);
std::vector<std::string> load_corpus(const std::string& path);
std::vector<std::pair<int64_t, int64_t>> load_qrels(const std::string& path);

void save_sts(const std::vector<StsRecord>& records, const std::string& path);
void save_retrieval(const std::vector<RetrievalRecord>& records, const std::string& path);
void save_corpus(const std::vector<std::string>& lines, const std::string& path);
void save_qrels(const std::vector<int64_t>& qrels, const std::string& path);

struct ContrastiveBatch {
  std::vector<std::vector<int64_t>> anchors;
  std::vector<std::vector<int64_t>> positives;
  // uniform count per anchor; empty when hard negatives are disabled
  std::vector<std::vector<std::vector<int64_t>>> hard_negatives;
  bool in_batch_negatives = true;
};

// Shuffles records with the given rng (fork one per epoch), tokenizes, and
// chunks into batches; the final ragged batch is kept. When hard negatives
// are requested the per-anchor count is the smallest count available across
// the epoch's records.
std::vector<ContrastiveBatch> make_batches(const std::vector<RetrievalRecord>& records,
                                           const Vocab& vocab, int64_t max_seq_len,
                                           int64_t batch_size, Rng rng,
                                           bool with_hard_negatives,
                                           bool in_batch_negatives);

}  // namespace ladder
