#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nsesum/tensor.hpp"

namespace nsesum {

using Rng = std::mt19937_64;

inline Tensor uniform_tensor(int rows, int cols, double lo, double hi, Rng& rng,
                             bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<size_t>(rows) * cols);
  for (auto& x : v) x = dist(rng);
  return cols == 1 && rows >= 0
             ? Tensor::vector(std::move(v), requires_grad)
             : Tensor::matrix(rows, cols, std::move(v), requires_grad);
}

inline Tensor uniform_matrix(int rows, int cols, double lo, double hi,
                             Rng& rng, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<size_t>(rows) * cols);
  for (auto& x : v) x = dist(rng);
  return Tensor::matrix(rows, cols, std::move(v), requires_grad);
}

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct LstmState {
  Tensor h;
  Tensor c;
};

// Single-layer LSTM cell with a combined 4H x (I+H) gate matrix.
// Gate row blocks in order: input, forget, output, candidate.
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(int input_dim, int hidden_dim, Rng& rng)
      : input_dim_(input_dim), hidden_dim_(hidden_dim) {
    w_ = uniform_matrix(4 * hidden_dim, input_dim + hidden_dim, -0.08, 0.08,
                        rng);
    std::uniform_real_distribution<double> dist(-0.08, 0.08);
    std::vector<double> bias(static_cast<size_t>(4 * hidden_dim));
    for (auto& x : bias) x = dist(rng);
    // forget-gate bias starts at 1
    for (int i = hidden_dim; i < 2 * hidden_dim; ++i) bias[i] = 1.0;
    b_ = Tensor::vector(std::move(bias), true);
  }

  int input_dim() const { return input_dim_; }
  int hidden_dim() const { return hidden_dim_; }

  LstmState initial_state() const {
    return {Tensor::zeros_vector(hidden_dim_), Tensor::zeros_vector(hidden_dim_)};
  }

  LstmState step(const Tensor& x, const LstmState& state) const {
    if (x.rows() != input_dim_ || x.rank() != 1)
      throw std::invalid_argument("lstm_step: input " + x.shape_str() +
                                  " != [" + std::to_string(input_dim_) + "]");
    if (state.h.rows() != hidden_dim_ || state.c.rows() != hidden_dim_)
      throw std::invalid_argument("lstm_step: state dims != hidden_dim " +
                                  std::to_string(hidden_dim_));
    const Tensor xh = concat(x, state.h);
    const Tensor gates = add(matmul(w_, xh), b_);
    const int H = hidden_dim_;
    const Tensor i = sigmoid_t(slice(gates, 0, H));
    const Tensor f = sigmoid_t(slice(gates, H, H));
    const Tensor o = sigmoid_t(slice(gates, 2 * H, H));
    const Tensor g = tanh_t(slice(gates, 3 * H, H));
    const Tensor c = add(mul(f, state.c), mul(i, g));
    const Tensor h = mul(o, tanh_t(c));
    return {h, c};
  }

  void collect_params(const std::string& prefix,
                      std::vector<NamedParam>& out) {
    out.push_back({prefix + ".w", w_});
    out.push_back({prefix + ".b", b_});
  }

  Tensor& weights() { return w_; }
  Tensor& bias() { return b_; }

 private:
  int input_dim_ = 0;
  int hidden_dim_ = 0;
  Tensor w_;
  Tensor b_;
};

// Feed-forward stack with tanh on hidden layers and a linear final layer.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::vector<int>& dims, Rng& rng) : dims_(dims) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp: need >= 2 dims");
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
      ws_.push_back(uniform_matrix(dims[i + 1], dims[i], -0.08, 0.08, rng));
      bs_.push_back(uniform_tensor(dims[i + 1], 1, -0.08, 0.08, rng));
    }
  }

  Tensor forward(const Tensor& x) const {
    if (x.rows() != dims_.front())
      throw std::invalid_argument("mlp: input " + x.shape_str() + " != [" +
                                  std::to_string(dims_.front()) + "]");
    Tensor h = x;
    for (size_t i = 0; i < ws_.size(); ++i) {
      h = add(matmul(ws_[i], h), bs_[i]);
      if (i + 1 < ws_.size()) h = tanh_t(h);
    }
    return h;
  }

  void collect_params(const std::string& prefix,
                      std::vector<NamedParam>& out) {
    for (size_t i = 0; i < ws_.size(); ++i) {
      out.push_back({prefix + ".w" + std::to_string(i), ws_[i]});
      out.push_back({prefix + ".b" + std::to_string(i), bs_[i]});
    }
  }

 private:
  std::vector<int> dims_;
  std::vector<Tensor> ws_;
  std::vector<Tensor> bs_;
};

// Token id -> embedding row. PAD row is zero by convention (see data.hpp).
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(int vocab_size, int embed_dim, Rng& rng, bool trainable = true)
      : vocab_size_(vocab_size), embed_dim_(embed_dim), trainable_(trainable) {
    table_ = uniform_matrix(vocab_size, embed_dim, -0.1, 0.1, rng, trainable);
    for (int j = 0; j < embed_dim; ++j) table_.value()[j] = 0.0;  // PAD row
  }

  int vocab_size() const { return vocab_size_; }
  int embed_dim() const { return embed_dim_; }
  Tensor& table() { return table_; }
  const Tensor& table() const { return table_; }

  Tensor lookup(int id) const { return row_select(table_, id); }
  Tensor lookup(const std::vector<int>& ids) const {
    return rows_select(table_, ids);
  }

  void collect_params(const std::string& prefix,
                      std::vector<NamedParam>& out) {
    if (trainable_) out.push_back({prefix + ".table", table_});
  }

 private:
  int vocab_size_ = 0;
  int embed_dim_ = 0;
  bool trainable_ = true;
  Tensor table_;
};

// Dot-product attention over memory rows: softmax(M . key) with masking.
inline Tensor dot_attention(const Tensor& memory, const Tensor& key,
                            const std::vector<uint8_t>& mask) {
  if (memory.rank() != 2 || memory.rows() == 0)
    throw std::invalid_argument("dot_attention: empty or non-matrix memory");
  if (key.rows() != memory.cols())
    throw std::invalid_argument("dot_attention: key " + key.shape_str() +
                                " vs memory " + memory.shape_str());
  return masked_softmax(matmul(memory, key), mask);
}

// Additive attention head: logits_i = v . tanh(W M_i + U key + b).
// W is l x l applied per memory row, so the head is slot-count independent.
class AdditiveAttention {
 public:
  AdditiveAttention() = default;
  AdditiveAttention(int dim, Rng& rng) : dim_(dim) {
    w_ = uniform_matrix(dim, dim, -0.08, 0.08, rng);
    u_ = uniform_matrix(dim, dim, -0.08, 0.08, rng);
    v_ = uniform_tensor(dim, 1, -0.08, 0.08, rng);
    b_ = uniform_tensor(dim, 1, -0.08, 0.08, rng);
  }

  Tensor operator()(const Tensor& memory, const Tensor& key,
                    const std::vector<uint8_t>& mask) const {
    if (memory.rank() != 2 || memory.cols() != dim_ || key.rows() != dim_)
      throw std::invalid_argument("additive_attention: memory " +
                                  memory.shape_str() + ", key " +
                                  key.shape_str() + ", dim " +
                                  std::to_string(dim_));
    // rows of memory * W^T give (W M_i)^T
    const Tensor wm = matmul(memory, transpose_w());
    const Tensor uk = add(matmul(u_, key), b_);
    const Tensor logits = matmul(tanh_t(add_rowwise(wm, uk)), v_);
    return masked_softmax(logits, mask);
  }

  void collect_params(const std::string& prefix,
                      std::vector<NamedParam>& out) {
    out.push_back({prefix + ".w", w_});
    out.push_back({prefix + ".u", u_});
    out.push_back({prefix + ".v", v_});
    out.push_back({prefix + ".b", b_});
  }

  Tensor& v() { return v_; }
  Tensor& w() { return w_; }
  Tensor& u() { return u_; }
  Tensor& b() { return b_; }

 private:
  // W M_i as a rowwise product needs M W^T; keep W in natural orientation
  // and build the transpose view on the fly (dims are small).
  Tensor transpose_w() const {
    std::vector<double> tv(static_cast<size_t>(dim_) * dim_);
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j < dim_; ++j)
        tv[static_cast<size_t>(j) * dim_ + i] =
            w_.value()[static_cast<size_t>(i) * dim_ + j];
    Tensor t = Tensor::matrix(dim_, dim_, std::move(tv), w_.requires_grad());
    if (detail::should_record(w_.requires_grad())) {
      auto wi = w_.impl_ptr(), ti = t.impl_ptr();
      const int d = dim_;
      Tape::active().record([wi, ti, d]() {
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j)
            wi->grad[static_cast<size_t>(i) * d + j] +=
                ti->grad[static_cast<size_t>(j) * d + i];
      });
    }
    return t;
  }

  int dim_ = 0;
  Tensor w_, u_, v_, b_;
};

}  // namespace nsesum
