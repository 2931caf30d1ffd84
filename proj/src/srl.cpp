// SPDX-License-Identifier: Apache-2.0

#include "ladder/srl.hpp"

#include <cmath>

#include "ladder/errors.hpp"

namespace ladder {

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "mnrl_cosine") return LossKind::MnrlCosine;
  if (s == "infonce_dot") return LossKind::InfoNceDot;
  throw ConfigError("unknown loss kind '" + s + "' (expected mnrl_cosine|infonce_dot)");
}

std::string loss_kind_to_string(LossKind k) {
  return k == LossKind::MnrlCosine ? "mnrl_cosine" : "infonce_dot";
}

Metric loss_metric(LossKind k) {
  return k == LossKind::MnrlCosine ? Metric::Cosine : Metric::Dot;
}

void SrlConfig::validate(const EncoderConfig& cfg) const {
  ladder.validate(cfg);
  if (!(kl_temperature > 0.0)) throw ConfigError("srl.kl_temperature must be > 0");
  if (!(mnrl_scale > 0.0)) throw ConfigError("srl.mnrl_scale must be > 0");
  optim.validate();
}

Tensor score_matrix(Tape* tp, const Tensor& anchors, const Tensor& candidates, Metric metric) {
  if (anchors.rank() != 2 || candidates.rank() != 2 || anchors.dim(1) != candidates.dim(1)) {
    throw ConfigError("score_matrix: embedding dims disagree, " + shape_str(anchors.shape()) +
                      " vs " + shape_str(candidates.shape()));
  }
  if (metric == Metric::Cosine) {
    return matmul(tp, l2_normalize_rows(tp, anchors),
                  transpose(tp, l2_normalize_rows(tp, candidates)));
  }
  return matmul(tp, anchors, transpose(tp, candidates));
}

Tensor contrastive_loss(Tape* tp, const Tensor& scores, const std::vector<int64_t>& targets,
                        double scale) {
  return nll_rows(tp, scale == 1.0 ? scores : ladder::scale(tp, scores, scale), targets);
}

namespace {

// log softmax over the last dim of raw values, no tape.
Tensor log_softmax_values(const Tensor& x, double tau) {
  Tensor scaled = x;
  if (tau != 1.0) scaled = scale(nullptr, x, 1.0 / tau);
  return log_softmax(nullptr, scaled);
}

}  // namespace

Tensor kl_alignment_loss(Tape* tp, const std::vector<Tensor>& score_matrices,
                         const Tensor& teacher_scores, double tau, bool teacher_to_student) {
  if (!(tau > 0.0)) throw ConfigError("kl_alignment_loss: temperature must be > 0");
  if (score_matrices.empty()) throw ConfigError("kl_alignment_loss: no score matrices");
  int64_t rows = teacher_scores.dim(0);
  for (const Tensor& s : score_matrices) {
    if (s.shape() != teacher_scores.shape()) {
      throw ConfigError("kl_alignment_loss: score matrix shape " + shape_str(s.shape()) +
                        " differs from teacher " + shape_str(teacher_scores.shape()));
    }
  }

  // Teacher distribution as constants; log-probs stay finite by construction.
  Tensor teacher_logp = log_softmax_values(teacher_scores, tau);
  Tensor teacher_p = exp_t(nullptr, teacher_logp);
  double teacher_entropy_term = 0.0;  // sum_ij p_ij log p_ij
  for (int64_t i = 0; i < teacher_p.numel(); ++i) {
    double p = teacher_p.vec()[static_cast<size_t>(i)];
    if (p > 0.0) teacher_entropy_term += p * teacher_logp.vec()[static_cast<size_t>(i)];
  }

  Tensor acc;
  for (const Tensor& s : score_matrices) {
    Tensor student_logp = log_softmax(tp, scale(tp, s, 1.0 / tau));
    Tensor term;
    if (teacher_to_student) {
      // KL(P || Q) = sum p log p - sum p log q, averaged over rows
      Tensor cross = scale(tp, sum_all(tp, mul(tp, student_logp, teacher_p)), -1.0);
      term = scale(tp, add_scalar(tp, cross, teacher_entropy_term),
                   1.0 / static_cast<double>(rows));
    } else {
      // KL(Q || P) = sum q (log q - log p)
      Tensor student_p = exp_t(tp, student_logp);
      Tensor diff = sub(tp, student_logp, teacher_logp);
      term = scale(tp, sum_all(tp, mul(tp, student_p, diff)), 1.0 / static_cast<double>(rows));
    }
    acc = acc.defined() ? add(tp, acc, term) : term;
  }
  return scale(tp, acc, 1.0 / static_cast<double>(score_matrices.size()));
}

namespace {

struct BatchEmbeddings {
  Tensor anchors;     // [B x d]
  Tensor candidates;  // [C x d]
};

// Embeds anchors and the shared candidate list for one ladder entry. Depth
// entries reuse one full-width trace per sequence; width entries need their
// own forward pass.
class SequenceEmbedder {
 public:
  SequenceEmbedder(Tape* tp, const EncoderParams& params, const EncoderConfig& cfg,
                   Axis axis, PoolMode pool_mode, Rng* dropout_rng)
      : tp_(tp),
        params_(params),
        cfg_(cfg),
        axis_(axis),
        pool_mode_(pool_mode),
        dropout_rng_(cfg.dropout_p > 0.0 ? dropout_rng : nullptr) {}

  void add_sequences(const std::vector<std::vector<int64_t>>& seqs) {
    for (const auto& s : seqs) sequences_.push_back(&s);
  }

  void prepare() {
    if (axis_ == Axis::Depth) {
      traces_.reserve(sequences_.size());
      for (const auto* seq : sequences_) {
        traces_.push_back(encoder_forward(tp_, params_, cfg_, *seq, WidthSpec::full(),
                                          dropout_rng_, dropout_rng_ != nullptr));
      }
    }
  }

  // Row tensors for every sequence under one entry, in insertion order.
  std::vector<Tensor> embed_all(const LadderEntry& entry) {
    std::vector<Tensor> out;
    out.reserve(sequences_.size());
    if (axis_ == Axis::Depth) {
      for (const ForwardTrace& trace : traces_) {
        out.push_back(embed_from_trace(tp_, trace, entry, pool_mode_));
      }
    } else {
      for (const auto* seq : sequences_) {
        out.push_back(embed_subnet(tp_, params_, cfg_, entry, *seq, pool_mode_, dropout_rng_,
                                   dropout_rng_ != nullptr));
      }
    }
    return out;
  }

 private:
  Tape* tp_;
  const EncoderParams& params_;
  const EncoderConfig& cfg_;
  Axis axis_;
  PoolMode pool_mode_;
  Rng* dropout_rng_;
  std::vector<const std::vector<int64_t>*> sequences_;
  std::vector<ForwardTrace> traces_;
};

}  // namespace

SrlLosses srl_losses(Tape* tp, const EncoderParams& params, const EncoderConfig& cfg,
                     const SrlConfig& scfg, const ContrastiveBatch& batch,
                     const Tensor* frozen_teacher_scores, Rng* dropout_rng) {
  int64_t b = static_cast<int64_t>(batch.anchors.size());
  if (b == 0) throw ConfigError("srl_losses: empty batch");
  if (batch.positives.size() != batch.anchors.size()) {
    throw ConfigError("srl_losses: anchors and positives differ in count");
  }
  if (!batch.hard_negatives.empty() && batch.hard_negatives.size() != batch.anchors.size()) {
    throw ConfigError("srl_losses: hard negative groups do not match anchors");
  }
  size_t negs_per_anchor = batch.hard_negatives.empty() ? 0 : batch.hard_negatives[0].size();
  for (const auto& group : batch.hard_negatives) {
    if (group.size() != negs_per_anchor) {
      throw ConfigError("srl_losses: hard negative count is not uniform");
    }
  }
  if (!batch.in_batch_negatives && negs_per_anchor == 0) {
    throw ConfigError("srl_losses: need in-batch negatives or hard negatives");
  }

  Metric metric = loss_metric(scfg.loss_kind);
  double scale_factor = scfg.loss_kind == LossKind::MnrlCosine ? scfg.mnrl_scale : 1.0;

  SequenceEmbedder embedder(tp, params, cfg, scfg.ladder.axis, scfg.pool_mode, dropout_rng);
  embedder.add_sequences(batch.anchors);
  embedder.add_sequences(batch.positives);
  for (const auto& group : batch.hard_negatives) embedder.add_sequences(group);
  embedder.prepare();

  // Candidate layout: positives first, then anchor-major hard negatives.
  std::vector<int64_t> targets;
  for (int64_t i = 0; i < b; ++i) targets.push_back(batch.in_batch_negatives ? i : 0);

  SrlLosses out;
  Tensor task_acc;
  for (const LadderEntry& entry : scfg.ladder.entries) {
    std::vector<Tensor> rows = embedder.embed_all(entry);
    auto row_at = [&](size_t i) { return rows[i]; };
    std::vector<Tensor> anchor_rows(rows.begin(), rows.begin() + b);
    Tensor anchors = stack_rows(tp, anchor_rows);

    Tensor scores;
    if (batch.in_batch_negatives) {
      std::vector<Tensor> cand_rows(rows.begin() + b, rows.end());
      Tensor candidates = stack_rows(tp, cand_rows);
      scores = score_matrix(tp, anchors, candidates, metric);
    } else {
      // per-anchor candidate rows: own positive then own hard negatives
      std::vector<Tensor> score_rows;
      for (int64_t i = 0; i < b; ++i) {
        std::vector<Tensor> cand{row_at(static_cast<size_t>(b + i))};
        for (size_t n = 0; n < negs_per_anchor; ++n) {
          cand.push_back(row_at(static_cast<size_t>(2 * b) + static_cast<size_t>(i) * negs_per_anchor + n));
        }
        Tensor a_row = stack_rows(tp, {row_at(static_cast<size_t>(i))});
        score_rows.push_back(score_matrix(tp, a_row, stack_rows(tp, cand), metric));
      }
      // assemble [B x (1+negs)]
      std::vector<Tensor> flat;
      for (Tensor& r : score_rows) flat.push_back(reshape(tp, r, {r.numel()}));
      scores = stack_rows(tp, flat);
    }
    out.score_matrices.push_back(scores);

    Tensor loss_e = contrastive_loss(tp, scores, targets, scale_factor);
    task_acc = task_acc.defined() ? add(tp, task_acc, loss_e) : loss_e;
  }
  out.task = scale(tp, task_acc, 1.0 / static_cast<double>(scfg.ladder.entries.size()));

  // Teacher scores become plain values here, which detaches them: the KL
  // target contributes no gradient.
  const Tensor& full_scores = out.score_matrices.back();
  Tensor teacher_values = frozen_teacher_scores != nullptr
                              ? *frozen_teacher_scores
                              : Tensor::from(full_scores.shape(), full_scores.vec());
  out.kl = kl_alignment_loss(tp, out.score_matrices, teacher_values, scfg.kl_temperature,
                             scfg.kl_teacher_to_student);
  out.total = add(tp, out.task, out.kl);
  return out;
}

std::vector<TrainLogEntry> train_srl(EncoderParams& params, const EncoderConfig& cfg,
                                     const SrlConfig& scfg,
                                     const std::vector<RetrievalRecord>& dataset,
                                     const Vocab& vocab, const TrainState* resume,
                                     TrainState* final_state, const StepCallback& on_step) {
  cfg.validate();
  scfg.validate(cfg);
  if (dataset.empty()) throw ConfigError("train_srl: empty dataset");

  bool with_negs = true;
  int64_t steps_per_epoch =
      (static_cast<int64_t>(dataset.size()) + scfg.optim.batch_size - 1) / scfg.optim.batch_size;
  int64_t total_steps = steps_per_epoch * scfg.optim.epochs;
  if (scfg.optim.max_steps > 0) total_steps = std::min(total_steps, scfg.optim.max_steps);

  AdamW opt(params.all(), scfg.optim);
  int64_t start_step = 0;
  if (resume != nullptr) {
    opt.restore(resume->optimizer);
    start_step = resume->global_step;
  }

  std::vector<TrainLogEntry> log;
  int64_t cached_epoch = -1;
  std::vector<ContrastiveBatch> batches;
  params.zero_grads();
  for (int64_t step = start_step; step < total_steps; ++step) {
    int64_t epoch = step / steps_per_epoch;
    if (epoch != cached_epoch) {
      batches = make_batches(dataset, vocab, cfg.max_seq_len, scfg.optim.batch_size,
                             Rng(scfg.seed, "srl-shuffle").fork(static_cast<uint64_t>(epoch)),
                             with_negs, /*in_batch_negatives=*/true);
      cached_epoch = epoch;
    }
    const ContrastiveBatch& batch = batches[static_cast<size_t>(step % steps_per_epoch)];

    Tape tape;
    Rng dropout_rng = Rng(scfg.seed, "srl-dropout").fork(static_cast<uint64_t>(step));
    SrlLosses losses = srl_losses(&tape, params, cfg, scfg, batch, nullptr, &dropout_rng);
    double total = losses.total.item();
    if (!std::isfinite(total)) {
      throw TrainingError("train_srl: non-finite loss at step " + std::to_string(step));
    }
    tape.backward(losses.total);
    double lr_factor = schedule_factor(scfg.optim.schedule, scfg.optim.warmup_ratio, step,
                                       total_steps);
    opt.step(lr_factor);

    TrainLogEntry entry{step, losses.task.item(), losses.kl.item(), total,
                        scfg.optim.lr * lr_factor};
    log.push_back(entry);
    if (on_step) on_step(entry);
  }
  if (final_state != nullptr) {
    final_state->global_step = total_steps;
    final_state->optimizer = opt.state();
  }
  return log;
}

}  // namespace ladder
