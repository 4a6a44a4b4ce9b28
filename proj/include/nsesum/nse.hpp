#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nsesum/layers.hpp"
#include "nsesum/tensor.hpp"

namespace nsesum {

// Evolving slot memory: one row per (truncated, padded) input token.
// PAD rows are masked out of every attention and never receive mass.
struct Memory {
  Tensor slots;                     // k x l
  std::vector<uint8_t> valid_mask;  // k entries, false on PAD slots

  int slot_count() const { return slots.rows(); }
  int dim() const { return slots.cols(); }
};

// Erase/write update of Eq-style convex row blend:
// row_i' = (1 - z_i) * row_i + z_i * h.
inline Memory memory_update(const Memory& memory, const Tensor& z,
                            const Tensor& h) {
  const int k = memory.slot_count(), l = memory.dim();
  if (z.rank() != 1 || z.rows() != k)
    throw std::invalid_argument("memory_update: z " + z.shape_str() +
                                " vs memory " + memory.slots.shape_str());
  if (h.rank() != 1 || h.rows() != l)
    throw std::invalid_argument("memory_update: h " + h.shape_str() +
                                " vs memory " + memory.slots.shape_str());
  double zsum = 0.0;
  for (double v : z.value()) zsum += v;
  if (std::abs(zsum - 1.0) > 1e-6)
    throw std::invalid_argument("memory_update: z not normalized, sum = " +
                                std::to_string(zsum));

  const bool rg = memory.slots.requires_grad() || z.requires_grad() ||
                  h.requires_grad();
  std::vector<double> out(memory.slots.value());
  for (int i = 0; i < k; ++i) {
    const double zi = z.at(i);
    for (int j = 0; j < l; ++j) {
      double& cell = out[static_cast<size_t>(i) * l + j];
      cell = (1.0 - zi) * cell + zi * h.at(j);
    }
  }
  Tensor slots = Tensor::matrix(k, l, std::move(out), rg);
  if (detail::should_record(rg)) {
    auto mi = memory.slots.impl_ptr(), zi_ = z.impl_ptr(), hi = h.impl_ptr(),
         ri = slots.impl_ptr();
    Tape::active().record([mi, zi_, hi, ri, k, l]() {
      for (int i = 0; i < k; ++i) {
        const double zi = zi_->value[i];
        double dz = 0.0;
        for (int j = 0; j < l; ++j) {
          const double g = ri->grad[static_cast<size_t>(i) * l + j];
          if (mi->requires_grad)
            mi->grad[static_cast<size_t>(i) * l + j] += (1.0 - zi) * g;
          if (hi->requires_grad) hi->grad[j] += zi * g;
          dz += g * (hi->value[j] - mi->value[static_cast<size_t>(i) * l + j]);
        }
        if (zi_->requires_grad) zi_->grad[i] += dz;
      }
    });
  }
  return Memory{slots, memory.valid_mask};
}

struct NseStepOutput {
  Tensor o_t;     // read state
  Tensor z_t;     // attention over memory slots
  Tensor m_rt;    // retrieved memory
  Tensor c_t;     // composed state
  Tensor h_t;     // write state
  Memory memory;  // updated memory
};

enum class NseVariant { vanilla, improved };

inline NseVariant parse_variant_flat(const std::string& s) {
  if (s == "vanilla") return NseVariant::vanilla;
  if (s == "improved") return NseVariant::improved;
  throw std::invalid_argument("unknown NSE variant: " + s);
}

// Recurrent state threaded through a flat NSE pass. The compose state is
// live only for the improved variant (compose is an LSTM there).
struct NseStates {
  LstmState read;
  LstmState write;
  LstmState compose;
};

// One vanilla NSE timestep: read, dot-attend, retrieve, MLP-compose,
// write, erase/write memory update.
inline NseStepOutput vanilla_nse_step(const Tensor& x_t, const Memory& memory,
                                      const LstmCell& read_lstm,
                                      const Mlp& compose_mlp,
                                      const LstmCell& write_lstm,
                                      NseStates& states) {
  states.read = read_lstm.step(x_t, states.read);
  const Tensor o_t = states.read.h;
  const Tensor z_t = dot_attention(memory.slots, o_t, memory.valid_mask);
  const Tensor m_rt = matmul(z_t, memory.slots);
  const Tensor c_t = compose_mlp.forward(concat(o_t, m_rt));
  states.write = write_lstm.step(c_t, states.write);
  const Tensor h_t = states.write.h;
  return {o_t, z_t, m_rt, c_t, h_t, memory_update(memory, z_t, h_t)};
}

// Improved NSE timestep: additive attention and an LSTM compose function
// whose state carries across timesteps.
inline NseStepOutput improved_nse_step(const Tensor& x_t, const Memory& memory,
                                       const LstmCell& read_lstm,
                                       const AdditiveAttention& attn,
                                       const LstmCell& compose_lstm,
                                       const LstmCell& write_lstm,
                                       NseStates& states) {
  states.read = read_lstm.step(x_t, states.read);
  const Tensor o_t = states.read.h;
  const Tensor z_t = attn(memory.slots, o_t, memory.valid_mask);
  const Tensor m_rt = matmul(z_t, memory.slots);
  states.compose = compose_lstm.step(concat(o_t, m_rt), states.compose);
  const Tensor c_t = states.compose.h;
  states.write = write_lstm.step(c_t, states.write);
  const Tensor h_t = states.write.h;
  return {o_t, z_t, m_rt, c_t, h_t, memory_update(memory, z_t, h_t)};
}

// Pointer-generator switch: p_gen = sigma(Wm.m_rt + Wh.h_t + Wo.o_t + b).
class PointerHead {
 public:
  PointerHead() = default;
  PointerHead(int dim, Rng& rng) {
    w_m_ = uniform_tensor(dim, 1, -0.08, 0.08, rng);
    w_h_ = uniform_tensor(dim, 1, -0.08, 0.08, rng);
    w_o_ = uniform_tensor(dim, 1, -0.08, 0.08, rng);
    b_ = Tensor::scalar(0.0, true);
  }

  Tensor p_gen(const Tensor& m_rt, const Tensor& h_t, const Tensor& o_t) const {
    Tensor s = add(add(matmul(w_m_, m_rt), matmul(w_h_, h_t)),
                   add(matmul(w_o_, o_t), b_));
    return sigmoid_t(s);
  }

  void collect_params(const std::string& prefix,
                      std::vector<NamedParam>& out) {
    out.push_back({prefix + ".w_m", w_m_});
    out.push_back({prefix + ".w_h", w_h_});
    out.push_back({prefix + ".w_o", w_o_});
    out.push_back({prefix + ".b", b_});
  }

 private:
  Tensor w_m_, w_h_, w_o_, b_;
};

// Extended-vocabulary mixture:
//   p(w) = p_gen * p_vocab(w) + (1 - p_gen) * sum_{i: src_i == w} z_i.
// source_ids are extended ids (>= V for per-document OOV); negative ids
// mark PAD slots and are skipped (their z must be zero by masking).
inline Tensor pointer_generator_mix(const Tensor& p_gen, const Tensor& p_vocab,
                                    const Tensor& z,
                                    const std::vector<int>& source_ids,
                                    int extended_size) {
  if (!p_gen.is_scalar())
    throw std::invalid_argument("pointer_generator_mix: p_gen must be scalar");
  if (static_cast<int>(source_ids.size()) != z.rows())
    throw std::invalid_argument("pointer_generator_mix: source_ids size " +
                                std::to_string(source_ids.size()) +
                                " != z length " + std::to_string(z.rows()));
  const int V = p_vocab.rows();
  if (extended_size < V)
    throw std::invalid_argument("pointer_generator_mix: extended size " +
                                std::to_string(extended_size) + " < V " +
                                std::to_string(V));
  double ps = 0.0, zs = 0.0;
  for (double v : p_vocab.value()) ps += v;
  for (double v : z.value()) zs += v;
  if (std::abs(ps - 1.0) > 1e-6)
    throw std::invalid_argument("pointer_generator_mix: p_vocab sum " +
                                std::to_string(ps));
  if (std::abs(zs - 1.0) > 1e-6)
    throw std::invalid_argument("pointer_generator_mix: z sum " +
                                std::to_string(zs));
  for (int id : source_ids)
    if (id >= extended_size)
      throw std::invalid_argument("pointer_generator_mix: source id " +
                                  std::to_string(id) + " >= extended size " +
                                  std::to_string(extended_size));

  const double g = p_gen.item();
  const bool rg = p_gen.requires_grad() || p_vocab.requires_grad() ||
                  z.requires_grad();
  std::vector<double> out(static_cast<size_t>(extended_size), 0.0);
  for (int w = 0; w < V; ++w) out[w] = g * p_vocab.at(w);
  for (size_t i = 0; i < source_ids.size(); ++i)
    if (source_ids[i] >= 0) out[source_ids[i]] += (1.0 - g) * z.at(i);
  Tensor res = Tensor::vector(std::move(out), rg);
  if (detail::should_record(rg)) {
    auto gi = p_gen.impl_ptr(), pi = p_vocab.impl_ptr(), zi = z.impl_ptr(),
         ri = res.impl_ptr();
    Tape::active().record([gi, pi, zi, ri, source_ids, V]() {
      const double g = gi->value[0];
      if (pi->requires_grad)
        for (int w = 0; w < V; ++w) pi->grad[w] += g * ri->grad[w];
      double dg = 0.0;
      for (int w = 0; w < V; ++w) dg += ri->grad[w] * pi->value[w];
      for (size_t i = 0; i < source_ids.size(); ++i) {
        if (source_ids[i] < 0) continue;
        const double gup = ri->grad[source_ids[i]];
        if (zi->requires_grad) zi->grad[i] += (1.0 - g) * gup;
        dg -= gup * zi->value[i];
      }
      if (gi->requires_grad) gi->grad[0] += dg;
    });
  }
  return res;
}

}  // namespace nsesum
