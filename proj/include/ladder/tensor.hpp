// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with reverse-mode autodiff on an explicit tape.
//
// All ops take a Tape* first; passing nullptr runs the value computation
// only (used for inference and finite-difference probes). A Tape lives for
// one training step. Persistent tensors (parameters) are created with
// requires_grad and accumulate gradients into their own grad buffer when
// Tape::backward runs.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ladder/rng.hpp"

namespace ladder {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return st_->shape; }
  int64_t numel() const { return static_cast<int64_t>(st_->data.size()); }
  int64_t dim(size_t i) const { return st_->shape[i]; }
  int64_t rank() const { return static_cast<int64_t>(st_->shape.size()); }

  double* data() { return st_->data.data(); }
  const double* data() const { return st_->data.data(); }
  std::vector<double>& vec() { return st_->data; }
  const std::vector<double>& vec() const { return st_->data; }
  double item() const;  // numel()==1 only

  bool requires_grad() const { return st_ && st_->requires_grad; }
  void set_requires_grad(bool v) { st_->requires_grad = v; }
  bool has_grad() const { return st_ && !st_->grad.empty(); }
  std::vector<double>& grad();              // allocates zeros if absent
  const std::vector<double>& grad() const;  // throws if absent
  void zero_grad();

  Tensor clone() const;

  const void* storage_key() const { return st_.get(); }

 private:
  friend class Tape;
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> st_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Runs reverse-mode accumulation from a scalar root. Gradients of every
  // requires_grad leaf that participated are +='d into the leaf's grad.
  void backward(const Tensor& root);

  size_t num_nodes() const { return nodes_.size(); }

  // --- internals used by ops ---
  using BackFn = std::function<void(Tape&, const double* out_grad)>;
  int emit(const Tensor& out, std::vector<int> parents, BackFn back);
  // Node id of t on this tape: its op output node, or a leaf node created
  // on first use if t requires grad. Returns -1 for constants.
  int node_of(const Tensor& t);
  // Gradient accumulation buffer for a node (allocated on first touch).
  double* grad_buf(int node, int64_t numel);

 private:
  struct Node {
    int64_t numel;
    std::vector<int> parents;
    BackFn back;
    std::shared_ptr<Tensor::Storage> leaf;  // set for parameter leaves
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::unordered_map<const void*, int> by_storage_;
};

// ---- ops ----------------------------------------------------------------

// Elementwise. add/mul/sub accept equal shapes, or b whose shape is a
// trailing suffix of a's (e.g. [T x D] op [D]); only that broadcast form is
// supported.
Tensor add(Tape* tp, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tp, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tp, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tp, const Tensor& a, double c);
Tensor add_scalar(Tape* tp, const Tensor& a, double c);
Tensor gelu(Tape* tp, const Tensor& x);       // tanh approximation
Tensor tanh_t(Tape* tp, const Tensor& x);
Tensor exp_t(Tape* tp, const Tensor& x);
Tensor log_t(Tape* tp, const Tensor& x);      // throws NumericError at x<=0

Tensor matmul(Tape* tp, const Tensor& a, const Tensor& b);  // [m x k][k x n]
Tensor transpose(Tape* tp, const Tensor& a);                // rank-2

// Softmax over the last dimension with a temperature divisor.
Tensor softmax(Tape* tp, const Tensor& x, double temperature);
Tensor log_softmax(Tape* tp, const Tensor& x);

Tensor sum_all(Tape* tp, const Tensor& x);   // -> [1]
Tensor mean_all(Tape* tp, const Tensor& x);  // -> [1]

// Same data, new shape (numel preserved); gradient passes through.
Tensor reshape(Tape* tp, const Tensor& x, Shape shape);

// Slicing / assembly. Row ops index the first dimension of a rank-2 tensor,
// column ops the last.
Tensor narrow_vec(Tape* tp, const Tensor& x, int64_t start, int64_t len);  // rank-1
Tensor narrow_rows(Tape* tp, const Tensor& x, int64_t start, int64_t len);
Tensor narrow_cols(Tape* tp, const Tensor& x, int64_t start, int64_t len);
Tensor gather_cols(Tape* tp, const Tensor& x, const std::vector<int64_t>& cols);
Tensor gather_rows(Tape* tp, const Tensor& x, const std::vector<int64_t>& rows);
Tensor stack_rows(Tape* tp, const std::vector<Tensor>& rows);  // n x [d] -> [n x d]
Tensor concat_cols(Tape* tp, const std::vector<Tensor>& parts);
Tensor pick_row(Tape* tp, const Tensor& x, int64_t row);       // -> [d]
Tensor replace_row(Tape* tp, const Tensor& x, int64_t row, const Tensor& v);

// Embedding lookup: rows of table at ids (ids may repeat; backward scatter-adds).
Tensor embedding(Tape* tp, const Tensor& table, const std::vector<int64_t>& ids);

Tensor layer_norm(Tape* tp, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-12);

// Mean over rows t with mask[t] != 0; throws when the mask selects nothing.
Tensor masked_mean_rows(Tape* tp, const Tensor& x, const std::vector<double>& mask);

// Row-wise L2 normalization; throws NumericError on a zero row.
Tensor l2_normalize_rows(Tape* tp, const Tensor& x);

// Mean over rows of -log softmax(logits)[row, target[row]].
Tensor nll_rows(Tape* tp, const Tensor& logits, const std::vector<int64_t>& targets);

Tensor dropout(Tape* tp, const Tensor& x, double p, Rng& rng, bool train);

// ---- gradient oracle ----------------------------------------------------

// Central finite differences against tape gradients. f must be a
// deterministic scalar function of params (checked by evaluating twice).
// Returns max over coordinates of |analytic - fd| / max(1, |analytic|).
double grad_check(const std::function<Tensor(Tape*)>& f, std::span<Tensor> params,
                  double h = 1e-5);

}  // namespace ladder
