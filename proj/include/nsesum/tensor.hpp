#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nsesum {

// Dense rank-1/rank-2 tensor of doubles participating in a reverse-mode
// differentiation tape. Values are stored row-major; a vector is rank 1
// with cols == 1 internally but reports rank() == 1.
namespace detail {

struct TensorImpl {
  int rows = 0;
  int cols = 1;
  int rank = 1;  // 1 or 2
  bool requires_grad = false;
  std::vector<double> value;
  std::vector<double> grad;  // allocated iff requires_grad
};

}  // namespace detail

class Tensor {
 public:
  Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

  static Tensor zeros_vector(int n, bool requires_grad = false) {
    return make(n, 1, 1, std::vector<double>(static_cast<size_t>(n), 0.0),
                requires_grad);
  }
  static Tensor zeros_matrix(int r, int c, bool requires_grad = false) {
    return make(r, c, 2, std::vector<double>(static_cast<size_t>(r) * c, 0.0),
                requires_grad);
  }
  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    const int n = static_cast<int>(v.size());
    return make(n, 1, 1, std::move(v), requires_grad);
  }
  static Tensor matrix(int r, int c, std::vector<double> v,
                       bool requires_grad = false) {
    if (static_cast<int>(v.size()) != r * c)
      throw std::invalid_argument("matrix: value length " +
                                  std::to_string(v.size()) + " != " +
                                  std::to_string(r) + "x" + std::to_string(c));
    return make(r, c, 2, std::move(v), requires_grad);
  }
  static Tensor scalar(double x, bool requires_grad = false) {
    return make(1, 1, 1, std::vector<double>{x}, requires_grad);
  }

  int rows() const { return impl_->rows; }
  int cols() const { return impl_->cols; }
  int rank() const { return impl_->rank; }
  int size() const { return impl_->rows * impl_->cols; }
  bool is_scalar() const { return impl_->rank == 1 && size() == 1; }
  bool requires_grad() const { return impl_->requires_grad; }

  const std::vector<double>& value() const { return impl_->value; }
  std::vector<double>& value() { return impl_->value; }
  const std::vector<double>& grad() const { return impl_->grad; }
  std::vector<double>& grad() { return impl_->grad; }

  double at(int i) const { return impl_->value[static_cast<size_t>(i)]; }
  double at(int i, int j) const {
    return impl_->value[static_cast<size_t>(i) * impl_->cols + j];
  }
  double item() const {
    if (!is_scalar()) throw std::invalid_argument("item: tensor not scalar");
    return impl_->value[0];
  }

  void zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  std::string shape_str() const {
    if (rank() == 1) return "[" + std::to_string(rows()) + "]";
    return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]";
  }

  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

 private:
  static Tensor make(int r, int c, int rank, std::vector<double> v,
                     bool requires_grad) {
    Tensor t;
    t.impl_->rows = r;
    t.impl_->cols = c;
    t.impl_->rank = rank;
    t.impl_->requires_grad = requires_grad;
    t.impl_->value = std::move(v);
    if (requires_grad)
      t.impl_->grad.assign(t.impl_->value.size(), 0.0);
    return t;
  }

  std::shared_ptr<detail::TensorImpl> impl_;
};

// Operation tape: nodes recorded in creation order, backward walks the
// exact reverse order. One backward per tape; reset() rearms it.
class Tape {
 public:
  static Tape& active() {
    static thread_local Tape tape;
    return tape;
  }

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  void record(std::function<void()> backprop) {
    nodes_.push_back(std::move(backprop));
  }

  size_t node_count() const { return nodes_.size(); }

  void backward_from(const Tensor& loss) {
    if (!loss.is_scalar())
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  loss.shape_str());
    if (consumed_)
      throw std::runtime_error("backward: tape already consumed; reset first");
    if (loss.requires_grad()) loss.impl()->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    consumed_ = true;
  }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
  bool recording_ = true;
};

// Temporarily disables tape recording (inference decodes, numeric probes).
struct NoGradGuard {
  NoGradGuard() : prev_(Tape::active().recording()) {
    Tape::active().set_recording(false);
  }
  ~NoGradGuard() { Tape::active().set_recording(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline void backward(const Tensor& loss) { Tape::active().backward_from(loss); }

namespace detail {

inline void check_finite(const char* op, const Tensor& t) {
  for (double x : t.value())
    if (!std::isfinite(x))
      throw std::invalid_argument(std::string(op) +
                                  ": non-finite input value");
}

inline bool should_record(bool requires_grad) {
  return requires_grad && Tape::active().recording();
}

inline Tensor result_like(int r, int c, int rank, std::vector<double> v,
                          bool requires_grad) {
  Tensor t = (rank == 1) ? Tensor::vector(std::move(v), requires_grad)
                         : Tensor::matrix(r, c, std::move(v), requires_grad);
  (void)r;
  return t;
}

}  // namespace detail

// ---- primitive forward ops -------------------------------------------------

// matmul covers (m x n)(n x p) -> m x p, (m x n)(n) -> m, (m)(m x n) -> n,
// and (n)(n) -> scalar (dot product).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check_finite("matmul", a);
  detail::check_finite("matmul", b);
  const bool rec = detail::should_record(a.requires_grad() || b.requires_grad());
  const bool rg = a.requires_grad() || b.requires_grad();

  int m, n, p;
  if (a.rank() == 2 && b.rank() == 2) {
    m = a.rows(); n = a.cols(); p = b.cols();
    if (b.rows() != n)
      throw std::invalid_argument("matmul: inner dims differ " +
                                  a.shape_str() + " vs " + b.shape_str());
  } else if (a.rank() == 2 && b.rank() == 1) {
    m = a.rows(); n = a.cols(); p = 1;
    if (b.rows() != n)
      throw std::invalid_argument("matmul: shape mismatch " + a.shape_str() +
                                  " vs " + b.shape_str());
  } else if (a.rank() == 1 && b.rank() == 2) {
    m = 1; n = a.rows(); p = b.cols();
    if (b.rows() != n)
      throw std::invalid_argument("matmul: shape mismatch " + a.shape_str() +
                                  " vs " + b.shape_str());
  } else {  // dot product
    if (a.rows() != b.rows())
      throw std::invalid_argument("matmul: shape mismatch " + a.shape_str() +
                                  " vs " + b.shape_str());
    m = 1; n = a.rows(); p = 1;
  }

  std::vector<double> out(static_cast<size_t>(m) * p, 0.0);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < n; ++k) {
      const double aik = av[static_cast<size_t>(i) * n + k];
      if (aik == 0.0) continue;
      for (int j = 0; j < p; ++j)
        out[static_cast<size_t>(i) * p + j] +=
            aik * bv[static_cast<size_t>(k) * p + j];
    }

  const int out_rank = (a.rank() == 2 && b.rank() == 2) ? 2 : 1;
  const int out_rows = (out_rank == 2) ? m : m * p;
  const int out_cols = (out_rank == 2) ? p : 1;
  Tensor res = detail::result_like(out_rows, out_cols, out_rank,
                                   std::move(out), rg);
  if (rec) {
    auto ai = a.impl_ptr(), bi = b.impl_ptr(), ri = res.impl_ptr();
    Tape::active().record([ai, bi, ri, m, n, p]() {
      const auto& g = ri->grad;
      if (ai->requires_grad) {
        for (int i = 0; i < m; ++i)
          for (int k = 0; k < n; ++k) {
            double acc = 0.0;
            for (int j = 0; j < p; ++j)
              acc += g[static_cast<size_t>(i) * p + j] *
                     bi->value[static_cast<size_t>(k) * p + j];
            ai->grad[static_cast<size_t>(i) * n + k] += acc;
          }
      }
      if (bi->requires_grad) {
        for (int k = 0; k < n; ++k)
          for (int j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i)
              acc += ai->value[static_cast<size_t>(i) * n + k] *
                     g[static_cast<size_t>(i) * p + j];
            bi->grad[static_cast<size_t>(k) * p + j] += acc;
          }
      }
    });
  }
  return res;
}

namespace detail {

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rank() != b.rank())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b,
                          Fwd fwd, Bwd bwd) {
  check_finite(name, a);
  check_finite(name, b);
  check_same_shape(name, a, b);
  const bool rg = a.requires_grad() || b.requires_grad();
  std::vector<double> out(a.value().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.value()[i], b.value()[i]);
  Tensor res = result_like(a.rows(), a.cols(), a.rank(), std::move(out), rg);
  if (should_record(rg)) {
    auto ai = a.impl_ptr(), bi = b.impl_ptr(), ri = res.impl_ptr();
    Tape::active().record([ai, bi, ri, bwd]() {
      for (size_t i = 0; i < ri->grad.size(); ++i) {
        double da, db;
        bwd(ai->value[i], bi->value[i], da, db);
        if (ai->requires_grad) ai->grad[i] += da * ri->grad[i];
        if (bi->requires_grad) bi->grad[i] += db * ri->grad[i];
      }
    });
  }
  return res;
}

template <typename Fwd, typename Deriv>
Tensor unary_elementwise(const char* name, const Tensor& a, Fwd fwd,
                         Deriv deriv) {
  check_finite(name, a);
  std::vector<double> out(a.value().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.value()[i]);
  Tensor res =
      result_like(a.rows(), a.cols(), a.rank(), std::move(out),
                  a.requires_grad());
  if (should_record(a.requires_grad())) {
    auto ai = a.impl_ptr(), ri = res.impl_ptr();
    Tape::active().record([ai, ri, deriv]() {
      for (size_t i = 0; i < ri->grad.size(); ++i)
        ai->grad[i] += deriv(ai->value[i], ri->value[i]) * ri->grad[i];
    });
  }
  return res;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double& da, double& db) { da = 1.0; db = 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double& da, double& db) { da = 1.0; db = -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double& da, double& db) { da = y; db = x; });
}

inline Tensor tanh_t(const Tensor& a) {
  return detail::unary_elementwise(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid_t(const Tensor& a) {
  return detail::unary_elementwise(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary_elementwise(
      "scale", a, [c](double x) { return c * x; },
      [c](double, double) { return c; });
}

inline Tensor sum(const Tensor& a) {
  detail::check_finite("sum", a);
  double s = 0.0;
  for (double x : a.value()) s += x;
  Tensor res = Tensor::scalar(s, a.requires_grad());
  if (detail::should_record(a.requires_grad())) {
    auto ai = a.impl_ptr(), ri = res.impl_ptr();
    Tape::active().record([ai, ri]() {
      for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += ri->grad[0];
    });
  }
  return res;
}

// Vector concatenation along axis 0.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  bool rg = false;
  size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 1)
      throw std::invalid_argument("concat: rank-1 inputs required, got " +
                                  p.shape_str());
    detail::check_finite("concat", p);
    rg = rg || p.requires_grad();
    total += p.value().size();
  }
  std::vector<double> out;
  out.reserve(total);
  for (const auto& p : parts)
    out.insert(out.end(), p.value().begin(), p.value().end());
  Tensor res = Tensor::vector(std::move(out), rg);
  if (detail::should_record(rg)) {
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    impls.reserve(parts.size());
    for (const auto& p : parts) impls.push_back(p.impl_ptr());
    auto ri = res.impl_ptr();
    Tape::active().record([impls, ri]() {
      size_t off = 0;
      for (const auto& pi : impls) {
        if (pi->requires_grad)
          for (size_t i = 0; i < pi->value.size(); ++i)
            pi->grad[i] += ri->grad[off + i];
        off += pi->value.size();
      }
    });
  }
  return res;
}

inline Tensor concat(const Tensor& a, const Tensor& b) {
  return concat(std::vector<Tensor>{a, b});
}

// Row-wise concatenation of matrices (masks handled by the caller).
inline Tensor vstack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("vstack: no inputs");
  const int c = parts.front().cols();
  bool rg = false;
  int total_rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.cols() != c)
      throw std::invalid_argument("vstack: incompatible " + p.shape_str());
    detail::check_finite("vstack", p);
    rg = rg || p.requires_grad();
    total_rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(total_rows) * c);
  for (const auto& p : parts)
    out.insert(out.end(), p.value().begin(), p.value().end());
  Tensor res = Tensor::matrix(total_rows, c, std::move(out), rg);
  if (detail::should_record(rg)) {
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    for (const auto& p : parts) impls.push_back(p.impl_ptr());
    auto ri = res.impl_ptr();
    Tape::active().record([impls, ri]() {
      size_t off = 0;
      for (const auto& pi : impls) {
        if (pi->requires_grad)
          for (size_t i = 0; i < pi->value.size(); ++i)
            pi->grad[i] += ri->grad[off + i];
        off += pi->value.size();
      }
    });
  }
  return res;
}

inline Tensor outer(const Tensor& a, const Tensor& b) {
  detail::check_finite("outer", a);
  detail::check_finite("outer", b);
  if (a.rank() != 1 || b.rank() != 1)
    throw std::invalid_argument("outer: rank-1 inputs required, got " +
                                a.shape_str() + " and " + b.shape_str());
  const int m = a.rows(), n = b.rows();
  const bool rg = a.requires_grad() || b.requires_grad();
  std::vector<double> out(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] = a.at(i) * b.at(j);
  Tensor res = Tensor::matrix(m, n, std::move(out), rg);
  if (detail::should_record(rg)) {
    auto ai = a.impl_ptr(), bi = b.impl_ptr(), ri = res.impl_ptr();
    Tape::active().record([ai, bi, ri, m, n]() {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const double g = ri->grad[static_cast<size_t>(i) * n + j];
          if (ai->requires_grad) ai->grad[i] += g * bi->value[j];
          if (bi->requires_grad) bi->grad[j] += g * ai->value[i];
        }
    });
  }
  return res;
}

inline Tensor slice(const Tensor& a, int offset, int len) {
  if (a.rank() != 1)
    throw std::invalid_argument("slice: rank-1 input required");
  if (offset < 0 || len <= 0 || offset + len > a.rows())
    throw std::invalid_argument("slice: range [" + std::to_string(offset) +
                                "," + std::to_string(offset + len) +
                                ") outside " + a.shape_str());
  std::vector<double> out(a.value().begin() + offset,
                          a.value().begin() + offset + len);
  Tensor res = Tensor::vector(std::move(out), a.requires_grad());
  if (detail::should_record(a.requires_grad())) {
    auto ai = a.impl_ptr(), ri = res.impl_ptr();
    Tape::active().record([ai, ri, offset, len]() {
      for (int i = 0; i < len; ++i) ai->grad[offset + i] += ri->grad[i];
    });
  }
  return res;
}

// View a tensor with a new shape over the same row-major storage.
inline Tensor reshape(const Tensor& a, int rows, int cols) {
  if (rows <= 0 || cols <= 0 ||
      static_cast<size_t>(rows) * cols != a.value().size())
    throw std::invalid_argument("reshape: " + a.shape_str() + " to [" +
                                std::to_string(rows) + "," +
                                std::to_string(cols) + "]");
  std::vector<double> v = a.value();
  Tensor res = cols == 1 ? Tensor::vector(std::move(v), a.requires_grad())
                         : Tensor::matrix(rows, cols, std::move(v),
                                          a.requires_grad());
  if (detail::should_record(a.requires_grad())) {
    auto ai = a.impl_ptr(), ri = res.impl_ptr();
    Tape::active().record([ai, ri]() {
      for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += ri->grad[i];
    });
  }
  return res;
}

// Select one row of a matrix as a vector; backward is a scatter-add.
inline Tensor row_select(const Tensor& m, int row) {
  if (m.rank() != 2)
    throw std::invalid_argument("row_select: rank-2 input required");
  if (row < 0 || row >= m.rows())
    throw std::invalid_argument("row_select: row " + std::to_string(row) +
                                " outside " + m.shape_str());
  const int c = m.cols();
  std::vector<double> out(m.value().begin() + static_cast<size_t>(row) * c,
                          m.value().begin() + static_cast<size_t>(row + 1) * c);
  Tensor res = Tensor::vector(std::move(out), m.requires_grad());
  if (detail::should_record(m.requires_grad())) {
    auto mi = m.impl_ptr(), ri = res.impl_ptr();
    Tape::active().record([mi, ri, row, c]() {
      for (int j = 0; j < c; ++j)
        mi->grad[static_cast<size_t>(row) * c + j] += ri->grad[j];
    });
  }
  return res;
}

// Gather several rows into a matrix (embedding lookup).
inline Tensor rows_select(const Tensor& m, const std::vector<int>& ids) {
  if (m.rank() != 2)
    throw std::invalid_argument("rows_select: rank-2 input required");
  const int c = m.cols();
  std::vector<double> out;
  out.reserve(ids.size() * static_cast<size_t>(c));
  for (int id : ids) {
    if (id < 0 || id >= m.rows())
      throw std::invalid_argument("rows_select: id " + std::to_string(id) +
                                  " outside " + m.shape_str());
    out.insert(out.end(), m.value().begin() + static_cast<size_t>(id) * c,
               m.value().begin() + static_cast<size_t>(id + 1) * c);
  }
  Tensor res = Tensor::matrix(static_cast<int>(ids.size()), c, std::move(out),
                              m.requires_grad());
  if (detail::should_record(m.requires_grad())) {
    auto mi = m.impl_ptr(), ri = res.impl_ptr();
    Tape::active().record([mi, ri, ids, c]() {
      for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < c; ++j)
          mi->grad[static_cast<size_t>(ids[i]) * c + j] +=
              ri->grad[i * static_cast<size_t>(c) + j];
    });
  }
  return res;
}

// M + broadcast(v) over every row.
inline Tensor add_rowwise(const Tensor& m, const Tensor& v) {
  detail::check_finite("add_rowwise", m);
  detail::check_finite("add_rowwise", v);
  if (m.rank() != 2 || v.rank() != 1 || v.rows() != m.cols())
    throw std::invalid_argument("add_rowwise: shapes " + m.shape_str() +
                                " and " + v.shape_str());
  const int r = m.rows(), c = m.cols();
  const bool rg = m.requires_grad() || v.requires_grad();
  std::vector<double> out(m.value());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] += v.at(j);
  Tensor res = Tensor::matrix(r, c, std::move(out), rg);
  if (detail::should_record(rg)) {
    auto mi = m.impl_ptr(), vi = v.impl_ptr(), ri = res.impl_ptr();
    Tape::active().record([mi, vi, ri, r, c]() {
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
          const double g = ri->grad[static_cast<size_t>(i) * c + j];
          if (mi->requires_grad) mi->grad[static_cast<size_t>(i) * c + j] += g;
          if (vi->requires_grad) vi->grad[j] += g;
        }
    });
  }
  return res;
}

// Numerically stable softmax with hard masking: masked positions are
// exactly zero in the output and receive no probability mass.
inline Tensor masked_softmax(const Tensor& logits,
                             const std::vector<uint8_t>& mask) {
  detail::check_finite("masked_softmax", logits);
  if (logits.rank() != 1)
    throw std::invalid_argument("masked_softmax: rank-1 logits required");
  if (static_cast<int>(mask.size()) != logits.rows())
    throw std::invalid_argument(
        "masked_softmax: mask length " + std::to_string(mask.size()) +
        " != logits length " + std::to_string(logits.rows()));
  const int n = logits.rows();
  double mx = -std::numeric_limits<double>::infinity();
  int live = 0;
  for (int i = 0; i < n; ++i)
    if (mask[i]) {
      mx = std::max(mx, logits.at(i));
      ++live;
    }
  if (live == 0)
    throw std::invalid_argument("masked_softmax: all positions masked");
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  double denom = 0.0;
  for (int i = 0; i < n; ++i)
    if (mask[i]) {
      out[i] = std::exp(logits.at(i) - mx);
      denom += out[i];
    }
  for (int i = 0; i < n; ++i) out[i] /= denom;
  Tensor res = Tensor::vector(std::move(out), logits.requires_grad());
  if (detail::should_record(logits.requires_grad())) {
    auto li = logits.impl_ptr(), ri = res.impl_ptr();
    Tape::active().record([li, ri, mask, n]() {
      double dot = 0.0;
      for (int i = 0; i < n; ++i)
        if (mask[i]) dot += ri->grad[i] * ri->value[i];
      for (int i = 0; i < n; ++i)
        if (mask[i]) li->grad[i] += ri->value[i] * (ri->grad[i] - dot);
    });
  }
  return res;
}

// -log(max(p[index], floor)). Probabilities at or below the floor get a
// flat (zero-gradient) contribution.
inline Tensor neg_log_pick(const Tensor& dist, int index,
                           double floor = 1e-12) {
  if (dist.rank() != 1)
    throw std::invalid_argument("neg_log_pick: rank-1 input required");
  if (index < 0 || index >= dist.rows())
    throw std::invalid_argument("neg_log_pick: index " +
                                std::to_string(index) + " outside " +
                                dist.shape_str());
  const double p = dist.at(index);
  Tensor res = Tensor::scalar(-std::log(std::max(p, floor)),
                              dist.requires_grad());
  if (detail::should_record(dist.requires_grad())) {
    auto di = dist.impl_ptr(), ri = res.impl_ptr();
    Tape::active().record([di, ri, index, floor]() {
      const double p = di->value[index];
      if (p > floor) di->grad[index] += (-1.0 / p) * ri->grad[0];
    });
  }
  return res;
}

// Shannon entropy -sum p log p (floored log) of a probability vector.
inline Tensor entropy(const Tensor& dist, double floor = 1e-12) {
  if (dist.rank() != 1)
    throw std::invalid_argument("entropy: rank-1 input required");
  double h = 0.0;
  for (double p : dist.value()) h -= p * std::log(std::max(p, floor));
  Tensor res = Tensor::scalar(h, dist.requires_grad());
  if (detail::should_record(dist.requires_grad())) {
    auto di = dist.impl_ptr(), ri = res.impl_ptr();
    Tape::active().record([di, ri, floor]() {
      for (size_t i = 0; i < di->value.size(); ++i) {
        const double p = di->value[i];
        const double d =
            -(std::log(std::max(p, floor)) + (p > floor ? 1.0 : 0.0));
        di->grad[i] += d * ri->grad[0];
      }
    });
  }
  return res;
}

// ---- finite-difference gradient checking ------------------------------------

// Runs f analytically and numerically around `point`, returning the maximum
// relative error |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& point, double eps = 1e-5) {
  Tape::active().reset();
  std::vector<double> vals = point.value();
  Tensor x = (point.rank() == 1)
                 ? Tensor::vector(vals, true)
                 : Tensor::matrix(point.rows(), point.cols(), vals, true);
  Tensor loss = f(x);
  if (!loss.is_scalar())
    throw std::invalid_argument("grad_check: f must be scalar-valued");
  backward(loss);
  std::vector<double> analytic = x.grad();
  Tape::active().reset();

  double max_err = 0.0;
  for (size_t i = 0; i < vals.size(); ++i) {
    auto eval = [&](double v) {
      NoGradGuard ng;
      std::vector<double> shifted = vals;
      shifted[i] = v;
      Tensor xx = (point.rank() == 1)
                      ? Tensor::vector(shifted)
                      : Tensor::matrix(point.rows(), point.cols(), shifted);
      const double y = f(xx).item();
      if (!std::isfinite(y))
        throw std::runtime_error("grad_check: non-finite value at coordinate " +
                                 std::to_string(i));
      return y;
    };
    const double numeric = (eval(vals[i] + eps) - eval(vals[i] - eps)) /
                           (2.0 * eps);
    // The floor keeps the ratio meaningful for near-zero gradients, where
    // central-difference round-off (~eps_mach * |f| / eps) dominates both
    // terms; it sits well below any gradient scale the check can resolve.
    const double denom =
        std::max(1e-6, std::abs(analytic[i]) + std::abs(numeric));
    max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
  }
  return max_err;
}

}  // namespace nsesum
