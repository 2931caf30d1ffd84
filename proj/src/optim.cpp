// SPDX-License-Identifier: Apache-2.0

#include "ladder/optim.hpp"

#include <cmath>

#include "ladder/errors.hpp"

namespace ladder {

ScheduleKind schedule_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::Linear;
  if (s == "cosine") return ScheduleKind::Cosine;
  if (s == "constant") return ScheduleKind::Constant;
  throw ConfigError("unknown lr schedule '" + s + "' (expected linear|cosine|constant)");
}

std::string schedule_to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::Linear: return "linear";
    case ScheduleKind::Cosine: return "cosine";
    case ScheduleKind::Constant: return "constant";
  }
  return "linear";
}

void OptimConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("optim.lr must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be >= 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw ConfigError("optim.warmup_ratio must lie in [0, 1)");
  }
  if (epochs < 1) throw ConfigError("optim.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("optim.batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optim.beta1/beta2 must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("optim.eps must be > 0");
}

double schedule_factor(ScheduleKind kind, double warmup_ratio, int64_t step,
                       int64_t total_steps) {
  if (total_steps <= 0) return 1.0;
  double t = static_cast<double>(step);
  double total = static_cast<double>(total_steps);
  double warm = std::floor(warmup_ratio * total);
  if (t < warm) return (t + 1.0) / warm;
  if (kind == ScheduleKind::Constant) return 1.0;
  double denom = std::max(1.0, total - warm);
  double progress = std::min(1.0, (t - warm) / denom);
  if (kind == ScheduleKind::Linear) return 1.0 - progress;
  return 0.5 * (1.0 + std::cos(M_PI * progress));  // cosine
}

AdamW::AdamW(std::vector<Tensor*> params, const OptimConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Tensor* p : params_) {
    m_.emplace_back(static_cast<size_t>(p->numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p->numel()), 0.0);
  }
}

void AdamW::step(double lr_factor) {
  ++step_count_;
  double lr = cfg_.lr * lr_factor;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = *params_[pi];
    if (!p.has_grad()) continue;  // parameter untouched this step
    const auto& g = p.grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    double* w = p.data();
    for (size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mh = m[i] / bc1;
      double vh = v[i] / bc2;
      w[i] -= lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }
  for (Tensor* p : params_) p->zero_grad();
}

AdamW::State AdamW::state() const { return State{step_count_, m_, v_}; }

void AdamW::restore(const State& s) {
  if (s.m.size() != m_.size() || s.v.size() != v_.size()) {
    throw ConfigError("AdamW::restore: state does not match parameter list");
  }
  step_count_ = s.step_count;
  m_ = s.m;
  v_ = s.v;
}

}  // namespace ladder
