// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay and warmup + linear/cosine decay
// schedules.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ladder/tensor.hpp"

namespace ladder {

enum class ScheduleKind { Linear, Cosine, Constant };

ScheduleKind schedule_from_string(const std::string& s);
std::string schedule_to_string(ScheduleKind k);

struct OptimConfig {
  double lr = 1e-4;
  double weight_decay = 0.0;
  double warmup_ratio = 0.1;
  ScheduleKind schedule = ScheduleKind::Linear;
  int64_t epochs = 1;
  int64_t batch_size = 128;
  int64_t max_steps = -1;  // <0: derived from epochs * batches
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// Learning-rate multiplier in [0, 1] at a given step of total_steps.
double schedule_factor(ScheduleKind kind, double warmup_ratio, int64_t step,
                       int64_t total_steps);

class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, const OptimConfig& cfg);

  // Applies one update using the gradients currently held by the params,
  // then clears them. lr_factor scales cfg.lr (schedule).
  void step(double lr_factor);

  int64_t step_count() const { return step_count_; }

  // Exact state for checkpointing; moments are ordered like the param list.
  struct State {
    int64_t step_count = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
  };
  State state() const;
  void restore(const State& s);

 private:
  std::vector<Tensor*> params_;
  OptimConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t step_count_ = 0;
};

}  // namespace ladder
