// SPDX-License-Identifier: Apache-2.0

#include "ladder/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "ladder/errors.hpp"

namespace ladder {

namespace {

const char* kReserved[4] = {"[PAD]", "[CLS]", "[MASK]", "[UNK]"};

std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

}  // namespace

Vocab Vocab::from_words(const std::vector<std::string>& words) {
  Vocab v;
  for (const char* r : kReserved) v.id_to_token.emplace_back(r);
  for (const std::string& w : words) {
    if (w.empty()) throw ConfigError("vocab: empty token");
    if (v.token_to_id.count(w)) throw ConfigError("vocab: duplicate token '" + w + "'");
    v.token_to_id[w] = static_cast<int64_t>(v.id_to_token.size());
    v.id_to_token.push_back(w);
  }
  return v;
}

int64_t Vocab::id(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(int64_t id) const {
  if (id < 0 || id >= size()) throw ConfigError("vocab: id " + std::to_string(id) + " out of range");
  return id_to_token[static_cast<size_t>(id)];
}

std::vector<int64_t> tokenize(const std::string& text, const Vocab& vocab,
                              int64_t max_seq_len, bool pad_to_max, bool allow_empty) {
  std::vector<std::string> words = split_ws(text);
  if (words.empty() && !allow_empty) {
    throw DataError("tokenize: empty text outside evaluation mode");
  }
  std::vector<int64_t> ids{kClsId};
  for (const std::string& w : words) {
    if (static_cast<int64_t>(ids.size()) >= max_seq_len) break;
    ids.push_back(vocab.id(w));
  }
  if (pad_to_max) ids.resize(static_cast<size_t>(max_seq_len), kPadId);
  return ids;
}

std::string detokenize(std::span<const int64_t> ids, const Vocab& vocab) {
  std::string out;
  for (int64_t id : ids) {
    if (id == kClsId || id == kPadId) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

// ---- synthetic task -------------------------------------------------------

void SyntheticTaskSpec::validate() const {
  if (vocab_size < 4 + num_topics * 4) {
    throw ConfigError("synthetic.vocab_size too small for " + std::to_string(num_topics) +
                      " topics (need >= 4 words per topic)");
  }
  if (num_topics < 2) throw ConfigError("synthetic.num_topics must be >= 2");
  if (docs_per_topic < 2) throw ConfigError("synthetic.docs_per_topic must be >= 2");
  if (sentence_len_min < 2 || sentence_len_max < sentence_len_min) {
    throw ConfigError("synthetic sentence length range is invalid");
  }
  if (!(noise_rate >= 0.0 && noise_rate < 1.0)) {
    throw ConfigError("synthetic.noise_rate must lie in [0, 1)");
  }
  if (queries_per_doc < 1) throw ConfigError("synthetic.queries_per_doc must be >= 1");
  if (hard_negatives < 0 || hard_negatives > docs_per_topic - 1) {
    throw ConfigError("synthetic.hard_negatives must lie in [0, docs_per_topic-1]");
  }
  if (num_eval_queries < 1 || num_sts_pairs < 0) {
    throw ConfigError("synthetic eval sizes are invalid");
  }
}

namespace {

std::vector<std::string> doc_words(const std::string& doc) { return split_ws(doc); }

std::string paraphrase(const std::vector<std::string>& words,
                       const std::vector<std::string>& topic_pool, double noise, Rng& rng) {
  std::vector<std::string> out;
  for (const std::string& w : words) {
    double u = rng.uniform();
    if (u < noise * 0.5) continue;  // dropout
    if (u < noise) {
      out.push_back(topic_pool[static_cast<size_t>(rng.uniform_int(
          static_cast<int64_t>(topic_pool.size())))]);  // swap
    } else {
      out.push_back(w);
    }
  }
  if (out.empty()) out.push_back(words[0]);
  std::string joined;
  for (const std::string& w : out) {
    if (!joined.empty()) joined += ' ';
    joined += w;
  }
  return joined;
}

double jaccard(const std::string& a, const std::string& b) {
  std::unordered_set<std::string> sa, sb;
  for (const std::string& w : split_ws(a)) sa.insert(w);
  for (const std::string& w : split_ws(b)) sb.insert(w);
  if (sa.empty() && sb.empty()) return 1.0;
  int64_t inter = 0;
  for (const std::string& w : sa) inter += sb.count(w) ? 1 : 0;
  int64_t uni = static_cast<int64_t>(sa.size() + sb.size()) - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

SyntheticData gen_synthetic(const SyntheticTaskSpec& spec) {
  spec.validate();
  SyntheticData data;

  int64_t num_words = spec.vocab_size - 4;
  std::vector<std::string> words;
  words.reserve(static_cast<size_t>(num_words));
  for (int64_t i = 0; i < num_words; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "w%04d", static_cast<int>(i));
    words.emplace_back(buf);
  }
  data.vocab = Vocab::from_words(words);

  // exclusive per-topic word pools
  int64_t per_topic = num_words / spec.num_topics;
  std::vector<std::vector<std::string>> pools(static_cast<size_t>(spec.num_topics));
  for (int64_t t = 0; t < spec.num_topics; ++t) {
    for (int64_t j = 0; j < per_topic; ++j)
      pools[static_cast<size_t>(t)].push_back(words[static_cast<size_t>(t * per_topic + j)]);
  }

  Rng doc_rng(spec.seed, "synthetic-docs");
  std::vector<int64_t> doc_topic;
  for (int64_t t = 0; t < spec.num_topics; ++t) {
    const auto& pool = pools[static_cast<size_t>(t)];
    for (int64_t d = 0; d < spec.docs_per_topic; ++d) {
      int64_t len = spec.sentence_len_min +
                    doc_rng.uniform_int(spec.sentence_len_max - spec.sentence_len_min + 1);
      std::string doc;
      for (int64_t i = 0; i < len; ++i) {
        if (!doc.empty()) doc += ' ';
        doc += pool[static_cast<size_t>(doc_rng.uniform_int(static_cast<int64_t>(pool.size())))];
      }
      data.corpus.push_back(doc);
      doc_topic.push_back(t);
    }
  }
  int64_t num_docs = static_cast<int64_t>(data.corpus.size());

  Rng train_rng(spec.seed, "synthetic-train");
  for (int64_t d = 0; d < num_docs; ++d) {
    int64_t topic = doc_topic[static_cast<size_t>(d)];
    const auto& pool = pools[static_cast<size_t>(topic)];
    auto wlist = doc_words(data.corpus[static_cast<size_t>(d)]);
    for (int64_t q = 0; q < spec.queries_per_doc; ++q) {
      RetrievalRecord rec;
      rec.query = paraphrase(wlist, pool, spec.noise_rate, train_rng);
      rec.positive = data.corpus[static_cast<size_t>(d)];
      // same-topic docs, excluding the source, without replacement
      std::vector<int64_t> candidates;
      for (int64_t other = 0; other < num_docs; ++other) {
        if (other != d && doc_topic[static_cast<size_t>(other)] == topic)
          candidates.push_back(other);
      }
      for (int64_t n = 0; n < spec.hard_negatives; ++n) {
        int64_t pick = train_rng.uniform_int(static_cast<int64_t>(candidates.size() - n));
        rec.hard_negatives.push_back(data.corpus[static_cast<size_t>(candidates[static_cast<size_t>(pick)])]);
        std::swap(candidates[static_cast<size_t>(pick)],
                  candidates[candidates.size() - 1 - static_cast<size_t>(n)]);
      }
      data.train_records.push_back(std::move(rec));
    }
  }

  Rng eval_rng(spec.seed, "synthetic-eval");
  for (int64_t q = 0; q < spec.num_eval_queries; ++q) {
    int64_t d = eval_rng.uniform_int(num_docs);
    int64_t topic = doc_topic[static_cast<size_t>(d)];
    data.eval_queries.push_back(paraphrase(doc_words(data.corpus[static_cast<size_t>(d)]),
                                           pools[static_cast<size_t>(topic)], spec.noise_rate,
                                           eval_rng));
    data.eval_qrels.push_back(d);
  }

  Rng sts_rng(spec.seed, "synthetic-sts");
  for (int64_t i = 0; i < spec.num_sts_pairs; ++i) {
    int64_t kind = sts_rng.uniform_int(3);
    int64_t da = sts_rng.uniform_int(num_docs);
    int64_t db;
    if (kind == 0) {
      db = da;  // two paraphrases of one document
    } else if (kind == 1) {
      do {
        db = sts_rng.uniform_int(num_docs);
      } while (doc_topic[static_cast<size_t>(db)] != doc_topic[static_cast<size_t>(da)] ||
               db == da);
    } else {
      do {
        db = sts_rng.uniform_int(num_docs);
      } while (doc_topic[static_cast<size_t>(db)] == doc_topic[static_cast<size_t>(da)]);
    }
    StsRecord rec;
    rec.sentence_a = paraphrase(doc_words(data.corpus[static_cast<size_t>(da)]),
                                pools[static_cast<size_t>(doc_topic[static_cast<size_t>(da)])],
                                spec.noise_rate, sts_rng);
    rec.sentence_b = paraphrase(doc_words(data.corpus[static_cast<size_t>(db)]),
                                pools[static_cast<size_t>(doc_topic[static_cast<size_t>(db)])],
                                spec.noise_rate, sts_rng);
    rec.score = 5.0 * jaccard(rec.sentence_a, rec.sentence_b);
    data.sts_records.push_back(std::move(rec));
  }
  return data;
}

// ---- file formats ----------------------------------------------------------

namespace {

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  return out;
}

[[noreturn]] void parse_error(const std::string& path, int64_t line_no, const std::string& what) {
  throw DataError(path + ":" + std::to_string(line_no) + ": " + what);
}

}  // namespace

std::vector<StsRecord> load_sts(const std::string& path) {
  auto in = open_input(path);
  std::vector<StsRecord> out;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t t1 = line.find('\t');
    if (t1 == std::string::npos) parse_error(path, line_no, "expected score<TAB>a<TAB>b");
    size_t t2 = line.find('\t', t1 + 1);
    if (t2 == std::string::npos) parse_error(path, line_no, "expected score<TAB>a<TAB>b");
    StsRecord rec;
    try {
      size_t used = 0;
      rec.score = std::stod(line.substr(0, t1), &used);
      if (used != t1) parse_error(path, line_no, "trailing characters in score");
    } catch (const DataError&) {
      throw;
    } catch (const std::exception&) {
      parse_error(path, line_no, "invalid score '" + line.substr(0, t1) + "'");
    }
    if (!(rec.score >= 0.0 && rec.score <= 5.0)) {
      parse_error(path, line_no, "score out of range [0, 5]");
    }
    rec.sentence_a = line.substr(t1 + 1, t2 - t1 - 1);
    rec.sentence_b = line.substr(t2 + 1);
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<RetrievalRecord> load_retrieval(const std::string& path) {
  auto in = open_input(path);
  std::vector<RetrievalRecord> out;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) parse_error(path, line_no, "invalid JSON object");
    RetrievalRecord rec;
    try {
      rec.query = j.at("query").get<std::string>();
      rec.positive = j.at("positive").get<std::string>();
      if (j.contains("negatives")) {
        for (const auto& n : j.at("negatives")) rec.hard_negatives.push_back(n.get<std::string>());
      }
    } catch (const std::exception& e) {
      parse_error(path, line_no, std::string("bad retrieval record: ") + e.what());
    }
    if (rec.positive.empty()) parse_error(path, line_no, "empty positive");
    if (rec.hard_negatives.size() > 7) {
      parse_error(path, line_no, "more than 7 hard negatives");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<std::string> load_corpus(const std::string& path) {
  auto in = open_input(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::vector<std::pair<int64_t, int64_t>> load_qrels(const std::string& path) {
  auto in = open_input(path);
  std::vector<std::pair<int64_t, int64_t>> out;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream is(line);
    int64_t qid, zero, docid, rel;
    if (!(is >> qid >> zero >> docid >> rel)) {
      parse_error(path, line_no, "expected: qid 0 docid rel");
    }
    if (rel > 0) out.emplace_back(qid, docid);
  }
  return out;
}

void save_sts(const std::vector<StsRecord>& records, const std::string& path) {
  auto out = open_output(path);
  out.precision(17);
  for (const StsRecord& r : records) out << r.score << '\t' << r.sentence_a << '\t' << r.sentence_b << '\n';
}

void save_retrieval(const std::vector<RetrievalRecord>& records, const std::string& path) {
  auto out = open_output(path);
  for (const RetrievalRecord& r : records) {
    nlohmann::json j;
    j["query"] = r.query;
    j["positive"] = r.positive;
    j["negatives"] = r.hard_negatives;
    out << j.dump() << '\n';
  }
}

void save_corpus(const std::vector<std::string>& lines, const std::string& path) {
  auto out = open_output(path);
  for (const std::string& l : lines) out << l << '\n';
}

void save_qrels(const std::vector<int64_t>& qrels, const std::string& path) {
  auto out = open_output(path);
  for (size_t q = 0; q < qrels.size(); ++q) out << q << " 0 " << qrels[q] << " 1\n";
}

// ---- batching ---------------------------------------------------------------

std::vector<ContrastiveBatch> make_batches(const std::vector<RetrievalRecord>& records,
                                           const Vocab& vocab, int64_t max_seq_len,
                                           int64_t batch_size, Rng rng,
                                           bool with_hard_negatives,
                                           bool in_batch_negatives) {
  if (in_batch_negatives && batch_size < 2) {
    throw ConfigError("make_batches: in-batch negatives require batch_size >= 2");
  }
  if (batch_size < 1) throw ConfigError("make_batches: batch_size must be >= 1");

  std::vector<size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  for (size_t i = order.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i)));
    std::swap(order[i - 1], order[j]);
  }

  size_t uniform_negs = 0;
  if (with_hard_negatives && !records.empty()) {
    uniform_negs = records[0].hard_negatives.size();
    for (const RetrievalRecord& r : records) {
      uniform_negs = std::min(uniform_negs, r.hard_negatives.size());
    }
  }

  std::vector<ContrastiveBatch> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    ContrastiveBatch batch;
    batch.in_batch_negatives = in_batch_negatives;
    for (size_t i = start; i < end; ++i) {
      const RetrievalRecord& r = records[order[i]];
      batch.anchors.push_back(tokenize(r.query, vocab, max_seq_len));
      batch.positives.push_back(tokenize(r.positive, vocab, max_seq_len));
      if (uniform_negs > 0) {
        std::vector<std::vector<int64_t>> negs;
        for (size_t n = 0; n < uniform_negs; ++n) {
          negs.push_back(tokenize(r.hard_negatives[n], vocab, max_seq_len));
        }
        batch.hard_negatives.push_back(std::move(negs));
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace ladder
