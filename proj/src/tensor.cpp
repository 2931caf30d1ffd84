// SPDX-License-Identifier: Apache-2.0

#include "ladder/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ladder/errors.hpp"

namespace ladder {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw ConfigError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ConfigError(std::string(op) + ": expected rank-2 tensor, got shape " +
                      shape_str(t.shape()));
  }
}

// b broadcastable onto a: identical shape, or b.shape a trailing suffix of
// a.shape. Returns the broadcast period (numel of b).
int64_t broadcast_period(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return b.numel();
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (bs.size() > as.size()) shape_error(op, as, bs);
  for (size_t i = 0; i < bs.size(); ++i) {
    if (bs[bs.size() - 1 - i] != as[as.size() - 1 - i]) shape_error(op, as, bs);
  }
  return b.numel();
}

}  // namespace

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? " x " : "") << shape[i];
  os << "]";
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  for (int64_t d : shape) {
    if (d <= 0) throw ConfigError("tensor dims must be positive, got " + shape_str(shape));
  }
  Tensor t;
  t.st_ = std::make_shared<Storage>();
  t.st_->shape = std::move(shape);
  t.st_->data.assign(static_cast<size_t>(shape_numel(t.st_->shape)), 0.0);
  t.st_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.vec().begin(), t.vec().end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ConfigError("tensor data length " + std::to_string(data.size()) +
                      " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.st_ = std::make_shared<Storage>();
  t.st_->shape = std::move(shape);
  t.st_->data = std::move(data);
  t.st_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.vec()) v = rng.normal(0.0, stddev);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ConfigError("item(): tensor has shape " + shape_str(shape()) + ", expected a scalar");
  }
  return st_->data[0];
}

std::vector<double>& Tensor::grad() {
  if (st_->grad.empty()) st_->grad.assign(st_->data.size(), 0.0);
  return st_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (st_->grad.empty()) throw ConfigError("grad(): no gradient has been accumulated");
  return st_->grad;
}

void Tensor::zero_grad() {
  if (st_) st_->grad.clear();
}

Tensor Tensor::clone() const {
  Tensor t;
  t.st_ = std::make_shared<Storage>(*st_);
  return t;
}

// ---- Tape -----------------------------------------------------------------

int Tape::emit(const Tensor& out, std::vector<int> parents, BackFn back) {
  Node node;
  node.numel = out.numel();
  node.parents = std::move(parents);
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  grads_.emplace_back();
  int id = static_cast<int>(nodes_.size()) - 1;
  by_storage_[out.storage_key()] = id;
  return id;
}

int Tape::node_of(const Tensor& t) {
  auto it = by_storage_.find(t.storage_key());
  if (it != by_storage_.end()) return it->second;
  if (!t.requires_grad()) return -1;
  Node node;
  node.numel = t.numel();
  node.leaf = t.st_;
  nodes_.push_back(std::move(node));
  grads_.emplace_back();
  int id = static_cast<int>(nodes_.size()) - 1;
  by_storage_[t.storage_key()] = id;
  return id;
}

double* Tape::grad_buf(int node, int64_t numel) {
  auto& g = grads_[static_cast<size_t>(node)];
  if (g.empty()) g.assign(static_cast<size_t>(numel), 0.0);
  return g.data();
}

void Tape::backward(const Tensor& root) {
  if (root.numel() != 1) {
    throw ConfigError("backward: root must be a scalar, got shape " + shape_str(root.shape()));
  }
  auto it = by_storage_.find(root.storage_key());
  if (it == by_storage_.end()) return;  // constant graph, nothing to do
  int root_id = it->second;
  grads_[static_cast<size_t>(root_id)] = {1.0};
  for (int id = root_id; id >= 0; --id) {
    auto& g = grads_[static_cast<size_t>(id)];
    if (g.empty()) continue;
    Node& node = nodes_[static_cast<size_t>(id)];
    if (node.back) node.back(*this, g.data());
  }
  for (size_t id = 0; id < nodes_.size(); ++id) {
    Node& node = nodes_[id];
    if (!node.leaf || grads_[id].empty()) continue;
    auto& dst = node.leaf->grad;
    if (dst.empty()) dst.assign(node.leaf->data.size(), 0.0);
    const auto& src = grads_[id];
    for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  }
}

// ---- elementwise ----------------------------------------------------------

namespace {

// Shared skeleton for a±b and a*b with trailing-suffix broadcast of b.
template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, Tape* tp, const Tensor& a, const Tensor& b, Fwd fwd,
                 Bwd bwd) {
  int64_t period = broadcast_period(name, a, b);
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i % period]);
  if (tp) {
    int pa_id = tp->node_of(a);
    int pb_id = tp->node_of(b);
    if (pa_id >= 0 || pb_id >= 0) {
      tp->emit(out, {pa_id, pb_id},
               [a, b, pa_id, pb_id, period, n, bwd](Tape& t, const double* g) {
                 double* ga = pa_id >= 0 ? t.grad_buf(pa_id, a.numel()) : nullptr;
                 double* gb = pb_id >= 0 ? t.grad_buf(pb_id, b.numel()) : nullptr;
                 for (int64_t i = 0; i < n; ++i) {
                   bwd(g[i], a.data()[i], b.data()[i % period], ga ? ga + i : nullptr,
                       gb ? gb + (i % period) : nullptr);
                 }
               });
    }
  }
  return out;
}

}  // namespace

Tensor add(Tape* tp, const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", tp, a, b, [](double x, double y) { return x + y; },
      [](double g, double, double, double* ga, double* gb) {
        if (ga) *ga += g;
        if (gb) *gb += g;
      });
}

Tensor sub(Tape* tp, const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", tp, a, b, [](double x, double y) { return x - y; },
      [](double g, double, double, double* ga, double* gb) {
        if (ga) *ga += g;
        if (gb) *gb -= g;
      });
}

Tensor mul(Tape* tp, const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", tp, a, b, [](double x, double y) { return x * y; },
      [](double g, double x, double y, double* ga, double* gb) {
        if (ga) *ga += g * y;
        if (gb) *gb += g * x;
      });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(Tape* tp, const Tensor& x, Fwd fwd, Bwd bwd) {
  Tensor out = Tensor::zeros(x.shape());
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = fwd(x.data()[i], i);
  if (tp) {
    int px = tp->node_of(x);
    if (px >= 0) {
      tp->emit(out, {px}, [x, out, px, n, bwd](Tape& t, const double* g) {
        double* gx = t.grad_buf(px, n);
        for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * bwd(x.data()[i], out.data()[i]);
      });
    }
  }
  return out;
}

}  // namespace

Tensor scale(Tape* tp, const Tensor& a, double c) {
  return unary_op(
      tp, a, [c](double x, int64_t) { return c * x; },
      [c](double, double) { return c; });
}

Tensor add_scalar(Tape* tp, const Tensor& a, double c) {
  return unary_op(
      tp, a, [c](double x, int64_t) { return x + c; },
      [](double, double) { return 1.0; });
}

Tensor gelu(Tape* tp, const Tensor& x) {
  return unary_op(
      tp, x,
      [](double v, int64_t) {
        double u = kGeluK * (v + kGeluC * v * v * v);
        return 0.5 * v * (1.0 + std::tanh(u));
      },
      [](double v, double) {
        double u = kGeluK * (v + kGeluC * v * v * v);
        double t = std::tanh(u);
        double du = kGeluK * (1.0 + 3.0 * kGeluC * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

Tensor tanh_t(Tape* tp, const Tensor& x) {
  return unary_op(
      tp, x, [](double v, int64_t) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor exp_t(Tape* tp, const Tensor& x) {
  return unary_op(
      tp, x,
      [](double v, int64_t i) {
        double y = std::exp(v);
        if (!std::isfinite(y)) {
          throw NumericError("exp: non-finite result at index " + std::to_string(i));
        }
        return y;
      },
      [](double, double y) { return y; });
}

Tensor log_t(Tape* tp, const Tensor& x) {
  return unary_op(
      tp, x,
      [](double v, int64_t i) {
        if (!(v > 0.0)) {
          throw NumericError("log: domain violation at index " + std::to_string(i) +
                             " (value " + std::to_string(v) + ")");
        }
        return std::log(v);
      },
      [](double v, double) { return 1.0 / v; });
}

// ---- matmul / transpose ----------------------------------------------------

Tensor matmul(Tape* tp, const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  {
    ConstMatMap ma(a.data(), m, k), mb(b.data(), k, n);
    MatMap mo(out.data(), m, n);
    mo.noalias() = ma * mb;
  }
  if (tp) {
    int pa = tp->node_of(a), pb = tp->node_of(b);
    if (pa >= 0 || pb >= 0) {
      tp->emit(out, {pa, pb}, [a, b, pa, pb, m, k, n](Tape& t, const double* g) {
        ConstMatMap mg(g, m, n);
        if (pa >= 0) {
          MatMap ga(t.grad_buf(pa, m * k), m, k);
          ConstMatMap mb(b.data(), k, n);
          ga.noalias() += mg * mb.transpose();
        }
        if (pb >= 0) {
          MatMap gb(t.grad_buf(pb, k * n), k, n);
          ConstMatMap ma(a.data(), m, k);
          gb.noalias() += ma.transpose() * mg;
        }
      });
    }
  }
  return out;
}

Tensor transpose(Tape* tp, const Tensor& a) {
  require_rank2(a, "transpose");
  int64_t r = a.dim(0), c = a.dim(1);
  Tensor out = Tensor::zeros({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out.data()[j * r + i] = a.data()[i * c + j];
  if (tp) {
    int pa = tp->node_of(a);
    if (pa >= 0) {
      tp->emit(out, {pa}, [pa, r, c](Tape& t, const double* g) {
        double* ga = t.grad_buf(pa, r * c);
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
      });
    }
  }
  return out;
}

// ---- softmax family ---------------------------------------------------------

Tensor softmax(Tape* tp, const Tensor& x, double temperature) {
  if (!(temperature > 0.0)) {
    throw ConfigError("softmax: temperature must be positive, got " +
                      std::to_string(temperature));
  }
  int64_t cols = x.dim(static_cast<size_t>(x.rank() - 1));
  int64_t rows = x.numel() / cols;
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * cols;
    double* o = out.data() + r * cols;
    double mx = in[0];
    for (int64_t c = 0; c < cols; ++c) {
      if (!std::isfinite(in[c])) {
        throw NumericError("softmax: non-finite input at row " + std::to_string(r));
      }
      mx = std::max(mx, in[c]);
    }
    double z = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      o[c] = std::exp((in[c] - mx) / temperature);
      z += o[c];
    }
    for (int64_t c = 0; c < cols; ++c) o[c] /= z;
  }
  if (tp) {
    int px = tp->node_of(x);
    if (px >= 0) {
      tp->emit(out, {px}, [out, px, rows, cols, temperature](Tape& t, const double* g) {
        double* gx = t.grad_buf(px, rows * cols);
        for (int64_t r = 0; r < rows; ++r) {
          const double* y = out.data() + r * cols;
          const double* gr = g + r * cols;
          double s = 0.0;
          for (int64_t c = 0; c < cols; ++c) s += gr[c] * y[c];
          for (int64_t c = 0; c < cols; ++c)
            gx[r * cols + c] += y[c] * (gr[c] - s) / temperature;
        }
      });
    }
  }
  return out;
}

Tensor log_softmax(Tape* tp, const Tensor& x) {
  int64_t cols = x.dim(static_cast<size_t>(x.rank() - 1));
  int64_t rows = x.numel() / cols;
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * cols;
    double* o = out.data() + r * cols;
    double mx = in[0];
    for (int64_t c = 0; c < cols; ++c) {
      if (!std::isfinite(in[c])) {
        throw NumericError("log_softmax: non-finite input at row " + std::to_string(r));
      }
      mx = std::max(mx, in[c]);
    }
    double z = 0.0;
    for (int64_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
    double lz = std::log(z) + mx;
    for (int64_t c = 0; c < cols; ++c) o[c] = in[c] - lz;
  }
  if (tp) {
    int px = tp->node_of(x);
    if (px >= 0) {
      tp->emit(out, {px}, [out, px, rows, cols](Tape& t, const double* g) {
        double* gx = t.grad_buf(px, rows * cols);
        for (int64_t r = 0; r < rows; ++r) {
          const double* ls = out.data() + r * cols;
          const double* gr = g + r * cols;
          double s = 0.0;
          for (int64_t c = 0; c < cols; ++c) s += gr[c];
          for (int64_t c = 0; c < cols; ++c)
            gx[r * cols + c] += gr[c] - std::exp(ls[c]) * s;
        }
      });
    }
  }
  return out;
}

// ---- reductions -------------------------------------------------------------

Tensor sum_all(Tape* tp, const Tensor& x) {
  double s = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x.data()[i];
  Tensor out = Tensor::scalar(s);
  if (tp) {
    int px = tp->node_of(x);
    if (px >= 0) {
      int64_t n = x.numel();
      tp->emit(out, {px}, [px, n](Tape& t, const double* g) {
        double* gx = t.grad_buf(px, n);
        for (int64_t i = 0; i < n; ++i) gx[i] += g[0];
      });
    }
  }
  return out;
}

Tensor mean_all(Tape* tp, const Tensor& x) {
  return scale(tp, sum_all(tp, x), 1.0 / static_cast<double>(x.numel()));
}

// ---- slicing / assembly ------------------------------------------------------

Tensor reshape(Tape* tp, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ConfigError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                      " changes element count");
  }
  Tensor out = Tensor::from(std::move(shape), x.vec());
  if (tp) {
    int px = tp->node_of(x);
    if (px >= 0) {
      int64_t n = x.numel();
      tp->emit(out, {px}, [px, n](Tape& t, const double* g) {
        double* gx = t.grad_buf(px, n);
        for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
      });
    }
  }
  return out;
}

Tensor narrow_vec(Tape* tp, const Tensor& x, int64_t start, int64_t len) {
  if (x.rank() != 1) {
    throw ConfigError("narrow_vec: expected rank-1 tensor, got shape " + shape_str(x.shape()));
  }
  if (start < 0 || len < 1 || start + len > x.dim(0)) {
    throw ConfigError("narrow_vec: range [" + std::to_string(start) + ", " +
                      std::to_string(start + len) + ") out of bounds for " +
                      shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros({len});
  std::copy(x.data() + start, x.data() + start + len, out.data());
  if (tp) {
    int px = tp->node_of(x);
    if (px >= 0) {
      int64_t total = x.numel();
      tp->emit(out, {px}, [px, start, len, total](Tape& t, const double* g) {
        double* gx = t.grad_buf(px, total);
        for (int64_t i = 0; i < len; ++i) gx[start + i] += g[i];
      });
    }
  }
  return out;
}

Tensor narrow_rows(Tape* tp, const Tensor& x, int64_t start, int64_t len) {
  require_rank2(x, "narrow_rows");
  if (start < 0 || len < 1 || start + len > x.dim(0)) {
    throw ConfigError("narrow_rows: range [" + std::to_string(start) + ", " +
                      std::to_string(start + len) + ") out of bounds for " +
                      shape_str(x.shape()));
  }
  int64_t c = x.dim(1);
  Tensor out = Tensor::zeros({len, c});
  std::copy(x.data() + start * c, x.data() + (start + len) * c, out.data());
  if (tp) {
    int px = tp->node_of(x);
    if (px >= 0) {
      int64_t total = x.numel();
      tp->emit(out, {px}, [px, start, len, c, total](Tape& t, const double* g) {
        double* gx = t.grad_buf(px, total);
        for (int64_t i = 0; i < len * c; ++i) gx[start * c + i] += g[i];
      });
    }
  }
  return out;
}

Tensor narrow_cols(Tape* tp, const Tensor& x, int64_t start, int64_t len) {
  require_rank2(x, "narrow_cols");
  if (start < 0 || len < 1 || start + len > x.dim(1)) {
    throw ConfigError("narrow_cols: range [" + std::to_string(start) + ", " +
                      std::to_string(start + len) + ") out of bounds for " +
                      shape_str(x.shape()));
  }
  int64_t r = x.dim(0), c = x.dim(1);
  Tensor out = Tensor::zeros({r, len});
  for (int64_t i = 0; i < r; ++i)
    std::copy(x.data() + i * c + start, x.data() + i * c + start + len, out.data() + i * len);
  if (tp) {
    int px = tp->node_of(x);
    if (px >= 0) {
      tp->emit(out, {px}, [px, start, len, r, c](Tape& t, const double* g) {
        double* gx = t.grad_buf(px, r * c);
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < len; ++j) gx[i * c + start + j] += g[i * len + j];
      });
    }
  }
  return out;
}

Tensor gather_cols(Tape* tp, const Tensor& x, const std::vector<int64_t>& cols) {
  require_rank2(x, "gather_cols");
  int64_t r = x.dim(0), c = x.dim(1);
  int64_t k = static_cast<int64_t>(cols.size());
  for (int64_t j : cols) {
    if (j < 0 || j >= c) {
      throw ConfigError("gather_cols: column " + std::to_string(j) + " out of bounds for " +
                        shape_str(x.shape()));
    }
  }
  Tensor out = Tensor::zeros({r, k});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < k; ++j) out.data()[i * k + j] = x.data()[i * c + cols[j]];
  if (tp) {
    int px = tp->node_of(x);
    if (px >= 0) {
      tp->emit(out, {px}, [px, cols, r, c, k](Tape& t, const double* g) {
        double* gx = t.grad_buf(px, r * c);
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < k; ++j) gx[i * c + cols[j]] += g[i * k + j];
      });
    }
  }
  return out;
}

Tensor gather_rows(Tape* tp, const Tensor& x, const std::vector<int64_t>& rows) {
  require_rank2(x, "gather_rows");
  int64_t r = x.dim(0), c = x.dim(1);
  int64_t k = static_cast<int64_t>(rows.size());
  for (int64_t i : rows) {
    if (i < 0 || i >= r) {
      throw ConfigError("gather_rows: row " + std::to_string(i) + " out of bounds for " +
                        shape_str(x.shape()));
    }
  }
  Tensor out = Tensor::zeros({k, c});
  for (int64_t i = 0; i < k; ++i)
    std::copy(x.data() + rows[i] * c, x.data() + (rows[i] + 1) * c, out.data() + i * c);
  if (tp) {
    int px = tp->node_of(x);
    if (px >= 0) {
      tp->emit(out, {px}, [px, rows, r, c, k](Tape& t, const double* g) {
        double* gx = t.grad_buf(px, r * c);
        for (int64_t i = 0; i < k; ++i)
          for (int64_t j = 0; j < c; ++j) gx[rows[i] * c + j] += g[i * c + j];
      });
    }
  }
  return out;
}

Tensor embedding(Tape* tp, const Tensor& table, const std::vector<int64_t>& ids) {
  require_rank2(table, "embedding");
  for (int64_t id : ids) {
    if (id < 0 || id >= table.dim(0)) {
      throw DataError("embedding: token id " + std::to_string(id) +
                      " out of range [0, " + std::to_string(table.dim(0)) + ")");
    }
  }
  return gather_rows(tp, table, ids);
}

Tensor stack_rows(Tape* tp, const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ConfigError("stack_rows: no rows given");
  int64_t d = rows[0].numel();
  int64_t n = static_cast<int64_t>(rows.size());
  Tensor out = Tensor::zeros({n, d});
  for (int64_t i = 0; i < n; ++i) {
    if (rows[static_cast<size_t>(i)].numel() != d) {
      throw ConfigError("stack_rows: row " + std::to_string(i) + " has " +
                        std::to_string(rows[static_cast<size_t>(i)].numel()) +
                        " elements, expected " + std::to_string(d));
    }
    std::copy(rows[static_cast<size_t>(i)].data(), rows[static_cast<size_t>(i)].data() + d,
              out.data() + i * d);
  }
  if (tp) {
    std::vector<int> parents(static_cast<size_t>(n));
    bool any = false;
    for (int64_t i = 0; i < n; ++i) {
      parents[static_cast<size_t>(i)] = tp->node_of(rows[static_cast<size_t>(i)]);
      any = any || parents[static_cast<size_t>(i)] >= 0;
    }
    if (any) {
      tp->emit(out, parents, [parents, n, d](Tape& t, const double* g) {
        for (int64_t i = 0; i < n; ++i) {
          int p = parents[static_cast<size_t>(i)];
          if (p < 0) continue;
          double* gp = t.grad_buf(p, d);
          for (int64_t j = 0; j < d; ++j) gp[j] += g[i * d + j];
        }
      });
    }
  }
  return out;
}

Tensor concat_cols(Tape* tp, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no parts given");
  int64_t r = parts[0].dim(0);
  int64_t total = 0;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != r) shape_error("concat_cols", parts[0].shape(), p.shape());
    total += p.dim(1);
  }
  Tensor out = Tensor::zeros({r, total});
  int64_t off = 0;
  for (const Tensor& p : parts) {
    int64_t c = p.dim(1);
    for (int64_t i = 0; i < r; ++i)
      std::copy(p.data() + i * c, p.data() + (i + 1) * c, out.data() + i * total + off);
    off += c;
  }
  if (tp) {
    std::vector<int> parents;
    std::vector<int64_t> widths;
    bool any = false;
    for (const Tensor& p : parts) {
      parents.push_back(tp->node_of(p));
      widths.push_back(p.dim(1));
      any = any || parents.back() >= 0;
    }
    if (any) {
      tp->emit(out, parents, [parents, widths, r, total](Tape& t, const double* g) {
        int64_t off = 0;
        for (size_t pi = 0; pi < parents.size(); ++pi) {
          int64_t c = widths[pi];
          if (parents[pi] >= 0) {
            double* gp = t.grad_buf(parents[pi], r * c);
            for (int64_t i = 0; i < r; ++i)
              for (int64_t j = 0; j < c; ++j) gp[i * c + j] += g[i * total + off + j];
          }
          off += c;
        }
      });
    }
  }
  return out;
}

Tensor pick_row(Tape* tp, const Tensor& x, int64_t row) {
  require_rank2(x, "pick_row");
  if (row < 0 || row >= x.dim(0)) {
    throw ConfigError("pick_row: row " + std::to_string(row) + " out of bounds for " +
                      shape_str(x.shape()));
  }
  int64_t c = x.dim(1);
  Tensor out = Tensor::zeros({c});
  std::copy(x.data() + row * c, x.data() + (row + 1) * c, out.data());
  if (tp) {
    int px = tp->node_of(x);
    if (px >= 0) {
      int64_t total = x.numel();
      tp->emit(out, {px}, [px, row, c, total](Tape& t, const double* g) {
        double* gx = t.grad_buf(px, total);
        for (int64_t j = 0; j < c; ++j) gx[row * c + j] += g[j];
      });
    }
  }
  return out;
}

Tensor replace_row(Tape* tp, const Tensor& x, int64_t row, const Tensor& v) {
  require_rank2(x, "replace_row");
  if (row < 0 || row >= x.dim(0)) {
    throw ConfigError("replace_row: row " + std::to_string(row) + " out of bounds for " +
                      shape_str(x.shape()));
  }
  if (v.numel() != x.dim(1)) shape_error("replace_row", x.shape(), v.shape());
  int64_t r = x.dim(0), c = x.dim(1);
  Tensor out = Tensor::zeros({r, c});
  std::copy(x.data(), x.data() + r * c, out.data());
  std::copy(v.data(), v.data() + c, out.data() + row * c);
  if (tp) {
    int px = tp->node_of(x);
    int pv = tp->node_of(v);
    if (px >= 0 || pv >= 0) {
      tp->emit(out, {px, pv}, [px, pv, row, r, c](Tape& t, const double* g) {
        if (px >= 0) {
          double* gx = t.grad_buf(px, r * c);
          for (int64_t i = 0; i < r; ++i) {
            if (i == row) continue;
            for (int64_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j];
          }
        }
        if (pv >= 0) {
          double* gv = t.grad_buf(pv, c);
          for (int64_t j = 0; j < c; ++j) gv[j] += g[row * c + j];
        }
      });
    }
  }
  return out;
}

// ---- fused layers -----------------------------------------------------------

Tensor layer_norm(Tape* tp, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require_rank2(x, "layer_norm");
  int64_t r = x.dim(0), c = x.dim(1);
  if (gain.numel() != c || bias.numel() != c) shape_error("layer_norm", x.shape(), gain.shape());
  Tensor out = Tensor::zeros({r, c});
  std::vector<double> inv_std(static_cast<size_t>(r)), means(static_cast<size_t>(r));
  for (int64_t i = 0; i < r; ++i) {
    const double* xi = x.data() + i * c;
    double mu = 0.0;
    for (int64_t j = 0; j < c; ++j) mu += xi[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(c);
    double is = 1.0 / std::sqrt(var + eps);
    means[static_cast<size_t>(i)] = mu;
    inv_std[static_cast<size_t>(i)] = is;
    for (int64_t j = 0; j < c; ++j)
      out.data()[i * c + j] = (xi[j] - mu) * is * gain.data()[j] + bias.data()[j];
  }
  if (tp) {
    int px = tp->node_of(x), pg = tp->node_of(gain), pb = tp->node_of(bias);
    if (px >= 0 || pg >= 0 || pb >= 0) {
      tp->emit(out, {px, pg, pb},
               [x, gain, px, pg, pb, r, c, means, inv_std](Tape& t, const double* g) {
                 double* gx = px >= 0 ? t.grad_buf(px, r * c) : nullptr;
                 double* gg = pg >= 0 ? t.grad_buf(pg, c) : nullptr;
                 double* gb = pb >= 0 ? t.grad_buf(pb, c) : nullptr;
                 std::vector<double> xh(static_cast<size_t>(c)), dxh(static_cast<size_t>(c));
                 for (int64_t i = 0; i < r; ++i) {
                   const double* xi = x.data() + i * c;
                   const double* gi = g + i * c;
                   double mu = means[static_cast<size_t>(i)];
                   double is = inv_std[static_cast<size_t>(i)];
                   double m1 = 0.0, m2 = 0.0;
                   for (int64_t j = 0; j < c; ++j) {
                     xh[static_cast<size_t>(j)] = (xi[j] - mu) * is;
                     dxh[static_cast<size_t>(j)] = gi[j] * gain.data()[j];
                     m1 += dxh[static_cast<size_t>(j)];
                     m2 += dxh[static_cast<size_t>(j)] * xh[static_cast<size_t>(j)];
                   }
                   m1 /= static_cast<double>(c);
                   m2 /= static_cast<double>(c);
                   for (int64_t j = 0; j < c; ++j) {
                     if (gx)
                       gx[i * c + j] +=
                           (dxh[static_cast<size_t>(j)] - m1 - xh[static_cast<size_t>(j)] * m2) * is;
                     if (gg) gg[j] += gi[j] * xh[static_cast<size_t>(j)];
                     if (gb) gb[j] += gi[j];
                   }
                 }
               });
    }
  }
  return out;
}

Tensor masked_mean_rows(Tape* tp, const Tensor& x, const std::vector<double>& mask) {
  require_rank2(x, "masked_mean_rows");
  int64_t r = x.dim(0), c = x.dim(1);
  if (static_cast<int64_t>(mask.size()) != r) {
    throw ConfigError("masked_mean_rows: mask length " + std::to_string(mask.size()) +
                      " does not match row count " + std::to_string(r));
  }
  double cnt = 0.0;
  for (double m : mask) cnt += (m != 0.0) ? 1.0 : 0.0;
  if (cnt == 0.0) throw DataError("masked_mean_rows: mask selects no rows (all padding)");
  Tensor out = Tensor::zeros({c});
  for (int64_t i = 0; i < r; ++i) {
    if (mask[static_cast<size_t>(i)] == 0.0) continue;
    for (int64_t j = 0; j < c; ++j) out.data()[j] += x.data()[i * c + j];
  }
  for (int64_t j = 0; j < c; ++j) out.data()[j] /= cnt;
  if (tp) {
    int px = tp->node_of(x);
    if (px >= 0) {
      tp->emit(out, {px}, [px, mask, r, c, cnt](Tape& t, const double* g) {
        double* gx = t.grad_buf(px, r * c);
        for (int64_t i = 0; i < r; ++i) {
          if (mask[static_cast<size_t>(i)] == 0.0) continue;
          for (int64_t j = 0; j < c; ++j) gx[i * c + j] += g[j] / cnt;
        }
      });
    }
  }
  return out;
}

Tensor l2_normalize_rows(Tape* tp, const Tensor& x) {
  require_rank2(x, "l2_normalize_rows");
  int64_t r = x.dim(0), c = x.dim(1);
  Tensor out = Tensor::zeros({r, c});
  std::vector<double> norms(static_cast<size_t>(r));
  for (int64_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) s += x.data()[i * c + j] * x.data()[i * c + j];
    double n = std::sqrt(s);
    if (n == 0.0) {
      throw NumericError("l2_normalize_rows: zero vector at row " + std::to_string(i));
    }
    norms[static_cast<size_t>(i)] = n;
    for (int64_t j = 0; j < c; ++j) out.data()[i * c + j] = x.data()[i * c + j] / n;
  }
  if (tp) {
    int px = tp->node_of(x);
    if (px >= 0) {
      tp->emit(out, {px}, [out, px, r, c, norms](Tape& t, const double* g) {
        double* gx = t.grad_buf(px, r * c);
        for (int64_t i = 0; i < r; ++i) {
          const double* y = out.data() + i * c;
          const double* gi = g + i * c;
          double dotgy = 0.0;
          for (int64_t j = 0; j < c; ++j) dotgy += gi[j] * y[j];
          for (int64_t j = 0; j < c; ++j)
            gx[i * c + j] += (gi[j] - y[j] * dotgy) / norms[static_cast<size_t>(i)];
        }
      });
    }
  }
  return out;
}

Tensor nll_rows(Tape* tp, const Tensor& logits, const std::vector<int64_t>& targets) {
  require_rank2(logits, "nll_rows");
  int64_t r = logits.dim(0), c = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != r) {
    throw ConfigError("nll_rows: " + std::to_string(targets.size()) + " targets for " +
                      std::to_string(r) + " rows");
  }
  for (int64_t t : targets) {
    if (t < 0 || t >= c) {
      throw ConfigError("nll_rows: target " + std::to_string(t) + " out of range [0, " +
                        std::to_string(c) + ")");
    }
  }
  // Keep softmax probabilities for the backward pass.
  Tensor probs = Tensor::zeros({r, c});
  double loss = 0.0;
  for (int64_t i = 0; i < r; ++i) {
    const double* in = logits.data() + i * c;
    double mx = in[0];
    for (int64_t j = 0; j < c; ++j) {
      if (!std::isfinite(in[j])) {
        throw NumericError("nll_rows: non-finite logit at row " + std::to_string(i));
      }
      mx = std::max(mx, in[j]);
    }
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) z += std::exp(in[j] - mx);
    double lz = std::log(z) + mx;
    loss -= (in[targets[static_cast<size_t>(i)]] - lz);
    for (int64_t j = 0; j < c; ++j) probs.data()[i * c + j] = std::exp(in[j] - lz);
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(r));
  if (tp) {
    int px = tp->node_of(logits);
    if (px >= 0) {
      tp->emit(out, {px}, [probs, px, r, c, targets](Tape& t, const double* g) {
        double* gx = t.grad_buf(px, r * c);
        double s = g[0] / static_cast<double>(r);
        for (int64_t i = 0; i < r; ++i) {
          for (int64_t j = 0; j < c; ++j) gx[i * c + j] += probs.data()[i * c + j] * s;
          gx[i * c + targets[static_cast<size_t>(i)]] -= s;
        }
      });
    }
  }
  return out;
}

Tensor dropout(Tape* tp, const Tensor& x, double p, Rng& rng, bool train) {
  if (!train || p == 0.0) return x;
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout: p must be in [0, 1), got " + std::to_string(p));
  }
  int64_t n = x.numel();
  auto keep = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  double inv = 1.0 / (1.0 - p);
  for (int64_t i = 0; i < n; ++i)
    (*keep)[static_cast<size_t>(i)] = rng.uniform() >= p ? inv : 0.0;
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * (*keep)[static_cast<size_t>(i)];
  if (tp) {
    int px = tp->node_of(x);
    if (px >= 0) {
      tp->emit(out, {px}, [px, keep, n](Tape& t, const double* g) {
        double* gx = t.grad_buf(px, n);
        for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * (*keep)[static_cast<size_t>(i)];
      });
    }
  }
  return out;
}

// ---- gradient oracle ----------------------------------------------------------

double grad_check(const std::function<Tensor(Tape*)>& f, std::span<Tensor> params, double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) {
    throw ConfigError("grad_check: h must lie in [1e-7, 1e-3], got " + std::to_string(h));
  }
  for (Tensor& p : params) p.zero_grad();
  Tape tape;
  Tensor loss = f(&tape);
  if (loss.numel() != 1) throw ConfigError("grad_check: f must return a scalar");
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor& p : params) {
    analytic.push_back(p.has_grad() ? p.grad()
                                    : std::vector<double>(static_cast<size_t>(p.numel()), 0.0));
  }

  double v1 = f(nullptr).item();
  double v2 = f(nullptr).item();
  if (v1 != v2) {
    throw NumericError("grad_check: f is not deterministic (" + std::to_string(v1) + " vs " +
                       std::to_string(v2) + ")");
  }

  double max_err = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    for (int64_t i = 0; i < p.numel(); ++i) {
      double x0 = p.data()[i];
      p.data()[i] = x0 + h;
      double fp = f(nullptr).item();
      p.data()[i] = x0 - h;
      double fm = f(nullptr).item();
      p.data()[i] = x0;
      double fd = (fp - fm) / (2.0 * h);
      double a = analytic[pi][static_cast<size_t>(i)];
      double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace ladder
