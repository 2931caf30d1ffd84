// SPDX-License-Identifier: Apache-2.0

#include "ladder/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "ladder/errors.hpp"

namespace ladder {

namespace {

constexpr char kMagic[4] = {'L', 'D', 'R', 'C'};

class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    u64(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    buf_.append(s);
  }
  void tensor(const Tensor& t) {
    u32(static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) i64(d);
    for (double v : t.vec()) f64(v);
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void raw(const char* data, size_t n) { buf_.append(data, n); }
  void raw(const std::string& s) { buf_.append(s); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& buf, size_t pos, size_t end) : buf_(buf), pos_(pos), end_(end) {}

  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf_[pos_++]);
  }
  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(u8()) << (8 * i);
    return v;
  }
  uint64_t u64() {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(u8()) << (8 * i);
    return v;
  }
  int64_t i64() { return static_cast<int64_t>(u64()); }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Tensor tensor(bool requires_grad) {
    uint32_t rank = u32();
    Shape shape;
    for (uint32_t i = 0; i < rank; ++i) shape.push_back(i64());
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    for (double& v : data) v = f64();
    return Tensor::from(std::move(shape), std::move(data), requires_grad);
  }
  std::vector<double> doubles() {
    uint64_t n = u64();
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = f64();
    return v;
  }
  bool done() const { return pos_ >= end_; }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n) {
    if (pos_ + n > end_) throw DataError("checkpoint: truncated section");
  }
  const std::string& buf_;
  size_t pos_, end_;
};

void write_encoder_config(ByteWriter& w, const EncoderConfig& cfg) {
  w.i64(cfg.vocab_size);
  w.i64(cfg.max_seq_len);
  w.i64(cfg.num_layers);
  w.i64(cfg.hidden_dim);
  w.i64(cfg.num_heads);
  w.i64(cfg.ffn_dim);
  w.i64(cfg.attn_dim);
  w.f64(cfg.dropout_p);
}

EncoderConfig read_encoder_config(ByteReader& r) {
  EncoderConfig cfg;
  cfg.vocab_size = r.i64();
  cfg.max_seq_len = r.i64();
  cfg.num_layers = r.i64();
  cfg.hidden_dim = r.i64();
  cfg.num_heads = r.i64();
  cfg.ffn_dim = r.i64();
  cfg.attn_dim = r.i64();
  cfg.dropout_p = r.f64();
  return cfg;
}

void write_ladder(ByteWriter& w, const Ladder& ladder) {
  w.str(axis_to_string(ladder.axis));
  w.u32(static_cast<uint32_t>(ladder.entries.size()));
  for (const LadderEntry& e : ladder.entries) {
    w.str(e.name);
    w.i64(e.depth_n);
    w.i64(e.width.ffn_active);
    w.i64(e.width.attn_active);
    w.i64(e.embed_dim);
  }
}

Ladder read_ladder(ByteReader& r) {
  Ladder ladder;
  ladder.axis = axis_from_string(r.str());
  uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    LadderEntry e;
    e.name = r.str();
    e.depth_n = r.i64();
    e.width.ffn_active = r.i64();
    e.width.attn_active = r.i64();
    e.embed_dim = r.i64();
    ladder.entries.push_back(std::move(e));
  }
  return ladder;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  ByteWriter body;

  auto section = [&body](const std::string& name, const ByteWriter& payload) {
    body.str(name);
    body.u64(payload.bytes().size());
    body.raw(payload.bytes());
  };

  {
    ByteWriter w;
    write_encoder_config(w, ckpt.config);
    section("config", w);
  }
  {
    ByteWriter w;
    w.u32(static_cast<uint32_t>(ckpt.vocab.id_to_token.size()));
    for (const std::string& t : ckpt.vocab.id_to_token) w.str(t);
    section("vocab", w);
  }
  {
    ByteWriter w;
    auto tensors = ckpt.params.all();
    w.u32(static_cast<uint32_t>(tensors.size()));
    for (const Tensor* t : tensors) w.tensor(*t);
    section("params", w);
  }
  if (ckpt.w.has_value()) {
    ByteWriter w;
    w.tensor(*ckpt.w);
    section("w", w);
  }
  if (ckpt.optimizer.has_value()) {
    ByteWriter w;
    w.i64(ckpt.optimizer->step_count);
    w.u32(static_cast<uint32_t>(ckpt.optimizer->m.size()));
    for (const auto& m : ckpt.optimizer->m) w.doubles(m);
    for (const auto& v : ckpt.optimizer->v) w.doubles(v);
    section("optimizer", w);
  }
  {
    ByteWriter w;
    w.u64(ckpt.seed);
    w.i64(ckpt.global_step);
    w.u32(static_cast<uint32_t>(ckpt.rng_counters.size()));
    for (const auto& [purpose, counter] : ckpt.rng_counters) {
      w.str(purpose);
      w.u64(counter);
    }
    section("rng", w);
  }
  {
    ByteWriter w;
    write_ladder(w, ckpt.ladder);
    section("ladder", w);
  }
  {
    ByteWriter w;
    w.str(ckpt.loss_kind);
    w.str(ckpt.pool_mode);
    section("meta", w);
  }

  ByteWriter file;
  file.raw(kMagic, sizeof(kMagic));
  file.u32(ckpt.version);
  file.raw(body.bytes());
  uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(file.bytes().data()),
            static_cast<uInt>(file.bytes().size())));
  file.u32(crc);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(file.bytes().data(), static_cast<std::streamsize>(file.bytes().size()));
  if (!out) throw DataError("failed writing checkpoint to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 8) throw DataError("checkpoint: file truncated");

  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("checkpoint: bad magic bytes");
  }
  uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i) {
    stored_crc |= static_cast<uint32_t>(static_cast<uint8_t>(buf[buf.size() - 4 + i])) << (8 * i);
  }
  uint32_t crc = static_cast<uint32_t>(crc32(
      0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size() - 4)));
  if (crc != stored_crc) throw DataError("checkpoint: checksum mismatch");

  ByteReader header(buf, sizeof(kMagic), buf.size() - 4);
  Checkpoint ckpt;
  ckpt.version = header.u32();
  if (ckpt.version != kCheckpointVersion) {
    throw DataError("checkpoint: version " + std::to_string(ckpt.version) +
                    " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  }

  bool have_config = false, have_vocab = false, have_params = false;
  std::string params_payload;
  ByteReader r(buf, header.pos(), buf.size() - 4);
  struct SectionSpan {
    std::string name;
    size_t begin, end;
  };
  std::vector<SectionSpan> sections;
  while (!r.done()) {
    std::string name = r.str();
    uint64_t len = r.u64();
    size_t begin = r.pos();
    if (begin + len > buf.size() - 4) throw DataError("checkpoint: truncated section '" + name + "'");
    sections.push_back({name, begin, begin + static_cast<size_t>(len)});
    r = ByteReader(buf, begin + static_cast<size_t>(len), buf.size() - 4);
  }

  auto find = [&](const std::string& name) -> const SectionSpan* {
    for (const SectionSpan& s : sections) {
      if (s.name == name) return &s;
    }
    return nullptr;
  };

  if (const SectionSpan* s = find("config")) {
    ByteReader sr(buf, s->begin, s->end);
    ckpt.config = read_encoder_config(sr);
    have_config = true;
  }
  if (const SectionSpan* s = find("vocab")) {
    ByteReader sr(buf, s->begin, s->end);
    uint32_t n = sr.u32();
    if (n < 4) throw DataError("checkpoint: vocab lacks the reserved tokens");
    std::vector<std::string> all;
    for (uint32_t i = 0; i < n; ++i) all.push_back(sr.str());
    ckpt.vocab = Vocab::from_words({all.begin() + 4, all.end()});
    have_vocab = true;
  }
  if (!have_config) throw DataError("checkpoint: missing config section");
  if (const SectionSpan* s = find("params")) {
    ByteReader sr(buf, s->begin, s->end);
    uint32_t n = sr.u32();
    Rng dummy(0, "load");
    ckpt.params = EncoderParams::init(ckpt.config, dummy);
    auto tensors = ckpt.params.all();
    if (n != tensors.size()) {
      throw DataError("checkpoint: parameter count mismatch (" + std::to_string(n) + " vs " +
                      std::to_string(tensors.size()) + ")");
    }
    for (Tensor* t : tensors) {
      Tensor loaded = sr.tensor(true);
      if (loaded.shape() != t->shape()) throw DataError("checkpoint: parameter shape mismatch");
      *t = loaded;
    }
    have_params = true;
  }
  if (!have_vocab || !have_params) throw DataError("checkpoint: missing required sections");

  if (const SectionSpan* s = find("w")) {
    ByteReader sr(buf, s->begin, s->end);
    ckpt.w = sr.tensor(true);
  }
  if (const SectionSpan* s = find("optimizer")) {
    ByteReader sr(buf, s->begin, s->end);
    AdamW::State st;
    st.step_count = sr.i64();
    uint32_t n = sr.u32();
    for (uint32_t i = 0; i < n; ++i) st.m.push_back(sr.doubles());
    for (uint32_t i = 0; i < n; ++i) st.v.push_back(sr.doubles());
    ckpt.optimizer = std::move(st);
  }
  if (const SectionSpan* s = find("rng")) {
    ByteReader sr(buf, s->begin, s->end);
    ckpt.seed = sr.u64();
    ckpt.global_step = sr.i64();
    uint32_t n = sr.u32();
    for (uint32_t i = 0; i < n; ++i) {
      std::string purpose = sr.str();
      ckpt.rng_counters[purpose] = sr.u64();
    }
  }
  if (const SectionSpan* s = find("ladder")) {
    ByteReader sr(buf, s->begin, s->end);
    ckpt.ladder = read_ladder(sr);
  }
  if (const SectionSpan* s = find("meta")) {
    ByteReader sr(buf, s->begin, s->end);
    ckpt.loss_kind = sr.str();
    ckpt.pool_mode = sr.str();
  }
  return ckpt;
}

}  // namespace ladder
