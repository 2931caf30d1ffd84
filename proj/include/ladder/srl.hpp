// SPDX-License-Identifier: Apache-2.0
//
// Sub-network representation learning: a contrastive loss averaged over
// every ladder entry plus a KL term aligning each entry's score
// distribution with the full model's, and the fine-tuning loop around them.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ladder/data.hpp"
#include "ladder/optim.hpp"
#include "ladder/subnet.hpp"

namespace ladder {

enum class LossKind { MnrlCosine, InfoNceDot };

LossKind loss_kind_from_string(const std::string& s);
std::string loss_kind_to_string(LossKind k);
Metric loss_metric(LossKind k);  // MNRL scores with cosine, InfoNCE with dot

struct SrlConfig {
  Ladder ladder;
  LossKind loss_kind = LossKind::InfoNceDot;
  double kl_temperature = 1.0;
  double mnrl_scale = 20.0;
  PoolMode pool_mode = PoolMode::Cls;
  // KL(teacher || student) with the full model as the target. The teacher
  // distribution is always a constant (no gradient); the direction is a
  // modeling decision and stays configurable.
  bool kl_teacher_to_student = true;
  OptimConfig optim;
  uint64_t seed = 0;

  void validate(const EncoderConfig& cfg) const;
};

// Pairwise scores between row embeddings: [B x d] x [C x d] -> [B x C].
Tensor score_matrix(Tape* tp, const Tensor& anchors, const Tensor& candidates, Metric metric);

// Mean over rows of -log softmax(scale * scores)[target].
Tensor contrastive_loss(Tape* tp, const Tensor& scores, const std::vector<int64_t>& targets,
                        double scale);

// Mean over entries of row-averaged KL(softmax(teacher/tau) || softmax(s/tau)).
// teacher_scores are raw values (not taped); every entry in score_matrices
// participates, including the full entry whose term is identically zero.
Tensor kl_alignment_loss(Tape* tp, const std::vector<Tensor>& score_matrices,
                         const Tensor& teacher_scores, double tau, bool teacher_to_student);

struct SrlLosses {
  Tensor task;   // mean contrastive loss over entries
  Tensor kl;     // alignment loss
  Tensor total;  // task + kl
  std::vector<Tensor> score_matrices;  // raw per-entry scores, ladder order
};

// One batch's losses. frozen_teacher_scores, when given, replaces the full
// entry's scores as the (constant) KL target; the finite-difference gradient
// oracle uses this to probe the detached-teacher loss. dropout_rng is only
// consulted when the encoder config enables dropout.
SrlLosses srl_losses(Tape* tp, const EncoderParams& params, const EncoderConfig& cfg,
                     const SrlConfig& scfg, const ContrastiveBatch& batch,
                     const Tensor* frozen_teacher_scores = nullptr,
                     Rng* dropout_rng = nullptr);

struct TrainLogEntry {
  int64_t step = 0;
  double task = 0.0, kl = 0.0, total = 0.0, lr = 0.0;
};

// Optimizer moments + cursor captured for exact resume.
struct TrainState {
  int64_t global_step = 0;
  AdamW::State optimizer;
};

using StepCallback = std::function<void(const TrainLogEntry&)>;

// AdamW fine-tuning over the dataset; mutates params in place and returns
// the per-step loss log. Deterministic for a fixed config seed. resume, when
// set, continues an interrupted run bit-exactly.
std::vector<TrainLogEntry> train_srl(EncoderParams& params, const EncoderConfig& cfg,
                                     const SrlConfig& scfg,
                                     const std::vector<RetrievalRecord>& dataset,
                                     const Vocab& vocab,
                                     const TrainState* resume = nullptr,
                                     TrainState* final_state = nullptr,
                                     const StepCallback& on_step = {});

}  // namespace ladder
