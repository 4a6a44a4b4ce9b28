#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nsesum/data.hpp"
#include "nsesum/layers.hpp"
#include "nsesum/nse.hpp"
#include "nsesum/tensor.hpp"

namespace nsesum {

enum class ModelVariant { vanilla, improved, hier };

inline ModelVariant parse_model_variant(const std::string& s) {
  if (s == "vanilla") return ModelVariant::vanilla;
  if (s == "improved") return ModelVariant::improved;
  if (s == "hier") return ModelVariant::hier;
  throw std::invalid_argument("unknown model variant: " + s);
}

inline std::string variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::vanilla: return "vanilla";
    case ModelVariant::improved: return "improved";
    case ModelVariant::hier: return "hier";
  }
  return "?";
}

struct ModelConfig {
  ModelVariant variant = ModelVariant::improved;
  CorpusMode mode = CorpusMode::plain;
  int vocab_size = 50000;
  int dim = 300;  // embedding dim == memory internal dim == LSTM hidden dim
  int max_sentences = 20;
  int max_words = 20;
  uint64_t seed = 1;
};

// One hierarchical NSE timestep against a word-level memory and the
// document memory; both are written with the same h_t.
struct HierStepOutput {
  Tensor o_t;
  Tensor z_s;   // word-level attention (drives copying in the decoder)
  Tensor z_d;
  Tensor m_s;   // retrieved word memory
  Tensor m_d;   // retrieved document memory ("highlight")
  Tensor c_t;
  Tensor h_t;
  Memory word_mem;
  Memory doc_mem;
};

inline HierStepOutput hier_nse_step(const Tensor& x_t, const Memory& word_mem,
                                    const Memory& doc_mem,
                                    const LstmCell& read_lstm,
                                    const AdditiveAttention& attn_word,
                                    const AdditiveAttention& attn_doc,
                                    const LstmCell& compose_lstm,
                                    const LstmCell& write_lstm,
                                    NseStates& states) {
  states.read = read_lstm.step(x_t, states.read);
  const Tensor o_t = states.read.h;
  const Tensor z_s = attn_word(word_mem.slots, o_t, word_mem.valid_mask);
  const Tensor z_d = attn_doc(doc_mem.slots, o_t, doc_mem.valid_mask);
  const Tensor m_s = matmul(z_s, word_mem.slots);
  const Tensor m_d = matmul(z_d, doc_mem.slots);
  states.compose =
      compose_lstm.step(concat({o_t, m_s, m_d}), states.compose);
  const Tensor c_t = states.compose.h;
  states.write = write_lstm.step(c_t, states.write);
  const Tensor h_t = states.write.h;
  return {o_t,  z_s,  z_d, m_s, m_d, c_t, h_t,
          memory_update(word_mem, z_s, h_t),
          memory_update(doc_mem, z_d, h_t)};
}

// Initial hierarchical memories: per-sentence word memories from embedding
// rows, document memory rows as the masked mean of each sentence's live
// word vectors (zero row, masked, for fully padded sentences).
struct HierInit {
  std::vector<Memory> bank;
  Memory doc;
};

inline Tensor vector_as_row(const Tensor& v) {
  if (v.rank() != 1) throw std::invalid_argument("vector_as_row: rank-1 required");
  const int n = v.rows();
  Tensor res = Tensor::matrix(1, n, v.value(), v.requires_grad());
  if (detail::should_record(v.requires_grad())) {
    auto vi = v.impl_ptr(), ri = res.impl_ptr();
    Tape::active().record([vi, ri, n]() {
      for (int j = 0; j < n; ++j) vi->grad[j] += ri->grad[j];
    });
  }
  return res;
}

inline HierInit init_hier_memories(const Example& ex,
                                   const EmbeddingTable& embedding) {
  const int S = static_cast<int>(ex.sent_mask.size());
  const int T = ex.words_per_sent;
  if (S == 0 || T == 0)
    throw std::invalid_argument("init_hier_memories: empty document");
  HierInit init;
  init.bank.reserve(static_cast<size_t>(S));
  std::vector<Tensor> doc_rows;
  std::vector<uint8_t> doc_mask;
  for (int i = 0; i < S; ++i) {
    std::vector<int> ids(ex.src_input_ids.begin() + static_cast<size_t>(i) * T,
                         ex.src_input_ids.begin() +
                             static_cast<size_t>(i + 1) * T);
    std::vector<uint8_t> mask(ex.src_mask.begin() + static_cast<size_t>(i) * T,
                              ex.src_mask.begin() +
                                  static_cast<size_t>(i + 1) * T);
    Memory m{embedding.lookup(ids), mask};
    int live = 0;
    for (uint8_t b : mask) live += b;
    if (live > 0) {
      std::vector<double> w(static_cast<size_t>(T), 0.0);
      for (int j = 0; j < T; ++j)
        if (mask[j]) w[j] = 1.0 / live;
      doc_rows.push_back(matmul(Tensor::vector(w), m.slots));
      doc_mask.push_back(1);
    } else {
      doc_rows.push_back(Tensor::zeros_vector(embedding.embed_dim()));
      doc_mask.push_back(0);
    }
    init.bank.push_back(std::move(m));
  }
  std::vector<Tensor> doc_row_mats;
  doc_row_mats.reserve(doc_rows.size());
  for (auto& r : doc_rows) doc_row_mats.push_back(vector_as_row(r));
  init.doc = Memory{vstack(doc_row_mats), std::move(doc_mask)};
  return init;
}

// Encoder/decoder half of the model: its own read/compose/write recurrences
// and attention heads, sharing the embedding table and the evolving memory.
struct NseStack {
  LstmCell read;
  LstmCell write;
  LstmCell compose;       // improved + hier
  Mlp compose_mlp;        // vanilla
  AdditiveAttention attn; // improved (single memory)
  AdditiveAttention attn_word;  // hier
  AdditiveAttention attn_doc;   // hier

  static NseStack create(ModelVariant variant, int dim, Rng& rng) {
    NseStack s;
    s.read = LstmCell(dim, dim, rng);
    switch (variant) {
      case ModelVariant::vanilla:
        s.compose_mlp = Mlp({2 * dim, dim, dim}, rng);
        break;
      case ModelVariant::improved:
        s.attn = AdditiveAttention(dim, rng);
        s.compose = LstmCell(2 * dim, dim, rng);
        break;
      case ModelVariant::hier:
        s.attn_word = AdditiveAttention(dim, rng);
        s.attn_doc = AdditiveAttention(dim, rng);
        s.compose = LstmCell(3 * dim, dim, rng);
        break;
    }
    s.write = LstmCell(dim, dim, rng);
    return s;
  }

  void collect_params(ModelVariant variant, const std::string& prefix,
                      std::vector<NamedParam>& out) {
    read.collect_params(prefix + ".read", out);
    switch (variant) {
      case ModelVariant::vanilla:
        compose_mlp.collect_params(prefix + ".compose_mlp", out);
        break;
      case ModelVariant::improved:
        attn.collect_params(prefix + ".attn", out);
        compose.collect_params(prefix + ".compose", out);
        break;
      case ModelVariant::hier:
        attn_word.collect_params(prefix + ".attn_word", out);
        attn_doc.collect_params(prefix + ".attn_doc", out);
        compose.collect_params(prefix + ".compose", out);
        break;
    }
    write.collect_params(prefix + ".write", out);
  }
};

// The full summarization model: embedding, encoder stack, decoder stack,
// vocabulary projection and pointer-generator head.
class Model {
 public:
  Model() = default;

  Model(const ModelConfig& cfg, EmbeddingTable embeddings)
      : cfg_(cfg), embedding_(std::move(embeddings)) {
    if (embedding_.vocab_size() != cfg.vocab_size ||
        embedding_.embed_dim() != cfg.dim)
      throw std::invalid_argument("model: embedding table is " +
                                  std::to_string(embedding_.vocab_size()) +
                                  "x" + std::to_string(embedding_.embed_dim()) +
                                  ", config wants " +
                                  std::to_string(cfg.vocab_size) + "x" +
                                  std::to_string(cfg.dim));
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    encoder_ = NseStack::create(cfg.variant, cfg.dim, rng);
    decoder_ = NseStack::create(cfg.variant, cfg.dim, rng);
    pointer_ = PointerHead(cfg.dim, rng);
    w_proj_ = uniform_matrix(cfg.vocab_size, cfg.dim, -0.08, 0.08, rng);
    b_proj_ = uniform_tensor(cfg.vocab_size, 1, -0.08, 0.08, rng);
  }

  Model(const ModelConfig& cfg) : Model(cfg, make_embedding(cfg)) {}

  const ModelConfig& config() const { return cfg_; }
  EmbeddingTable& embedding() { return embedding_; }
  const EmbeddingTable& embedding() const { return embedding_; }
  NseStack& encoder() { return encoder_; }
  NseStack& decoder() { return decoder_; }
  PointerHead& pointer_head() { return pointer_; }

  std::vector<NamedParam> params() {
    std::vector<NamedParam> out;
    embedding_.collect_params("embedding", out);
    encoder_.collect_params(cfg_.variant, "encoder", out);
    decoder_.collect_params(cfg_.variant, "decoder", out);
    pointer_.collect_params("pointer", out);
    out.push_back({"proj.w", w_proj_});
    out.push_back({"proj.b", b_proj_});
    return out;
  }

  // Memories plus recurrent state carried across decode steps.
  struct State {
    Memory mem;       // flat memory, or assembled word-level memory (hier)
    Memory doc;       // hier only
    NseStates states;
    bool hier = false;
  };

  struct EncodeTrace {
    std::vector<Tensor> writes;  // h_t per input step
  };

  // Flat memory initialized from the input tokens' embedding rows (one
  // slot per token), then evolved once per token.
  State encode(const Example& ex, EncodeTrace* trace = nullptr) const {
    if (ex.src_tokens.empty())
      throw std::invalid_argument("encode: empty input");
    return ex.hier ? encode_hier(ex, trace) : encode_flat(ex, trace);
  }

  struct StepResult {
    Tensor dist;   // extended-vocabulary distribution
    Tensor p_gen;
  };

  // One decoder step: feed the previous output token (gold or generated;
  // OOV ids embed as UNK), evolve memories, mix generation with copying.
  StepResult decode_step(State& st, int prev_extended_id,
                         const Example& ex) const {
    const int input_id = prev_extended_id < cfg_.vocab_size
                             ? prev_extended_id
                             : Vocabulary::kUnk;
    const Tensor x = embedding_.lookup(input_id);
    Tensor o_t, h_t, m_rt, z_copy;
    if (!st.hier) {
      NseStepOutput out = flat_step(decoder_, x, st.mem, st.states);
      st.mem = out.memory;
      o_t = out.o_t;
      h_t = out.h_t;
      m_rt = out.m_rt;
      z_copy = out.z_t;
    } else {
      HierStepOutput out = hier_nse_step(
          x, st.mem, st.doc, decoder_.read, decoder_.attn_word,
          decoder_.attn_doc, decoder_.compose, decoder_.write, st.states);
      st.mem = out.word_mem;
      st.doc = out.doc_mem;
      o_t = out.o_t;
      h_t = out.h_t;
      m_rt = out.m_s;
      z_copy = out.z_s;
    }
    const Tensor logits = add(matmul(w_proj_, h_t), b_proj_);
    const Tensor p_vocab = masked_softmax(
        logits, std::vector<uint8_t>(static_cast<size_t>(cfg_.vocab_size), 1));
    const Tensor p_gen = pointer_.p_gen(m_rt, h_t, o_t);
    const Tensor dist =
        pointer_generator_mix(p_gen, p_vocab, z_copy, ex.src_extended_ids,
                              cfg_.vocab_size + ex.oov.size());
    return {dist, p_gen};
  }

  Memory initial_flat_memory(const Example& ex) const {
    return Memory{embedding_.lookup(ex.src_input_ids), ex.src_mask};
  }

 private:
  static EmbeddingTable make_embedding(const ModelConfig& cfg) {
    Rng rng(cfg.seed);
    return EmbeddingTable(cfg.vocab_size, cfg.dim, rng);
  }

  NseStepOutput flat_step(const NseStack& stack, const Tensor& x,
                          const Memory& mem, NseStates& states) const {
    if (cfg_.variant == ModelVariant::vanilla)
      return vanilla_nse_step(x, mem, stack.read, stack.compose_mlp,
                              stack.write, states);
    return improved_nse_step(x, mem, stack.read, stack.attn, stack.compose,
                             stack.write, states);
  }

  State encode_flat(const Example& ex, EncodeTrace* trace) const {
    State st;
    st.hier = false;
    st.mem = initial_flat_memory(ex);
    NseStates enc_states{encoder_.read.initial_state(),
                         encoder_.write.initial_state(),
                         cfg_.variant == ModelVariant::vanilla
                             ? LstmState{}
                             : encoder_.compose.initial_state()};
    for (size_t t = 0; t < ex.src_input_ids.size(); ++t) {
      const Tensor x = embedding_.lookup(ex.src_input_ids[t]);
      NseStepOutput out = flat_step(encoder_, x, st.mem, enc_states);
      st.mem = out.memory;
      if (trace) trace->writes.push_back(out.h_t);
    }
    st.states = NseStates{decoder_.read.initial_state(),
                          decoder_.write.initial_state(),
                          cfg_.variant == ModelVariant::vanilla
                              ? LstmState{}
                              : decoder_.compose.initial_state()};
    return st;
  }

  // Sentence-by-sentence encoding: sentence i's memory sees only sentence
  // i's words; the document memory sees every word. Read/compose/write
  // states run continuously across sentence boundaries.
  State encode_hier(const Example& ex, EncodeTrace* trace) const {
    const int S = static_cast<int>(ex.sent_mask.size());
    const int T = ex.words_per_sent;
    if (S == 0 || T == 0) throw std::invalid_argument("encode: empty document");

    HierInit init = init_hier_memories(ex, embedding_);
    std::vector<Memory>& bank = init.bank;
    Memory doc = std::move(init.doc);

    NseStates enc_states{encoder_.read.initial_state(),
                         encoder_.write.initial_state(),
                         encoder_.compose.initial_state()};
    for (int i = 0; i < S; ++i) {
      // causal document mask: sentence i never reads document slots of
      // sentences after i, so earlier sentence memories stay independent
      // of later-sentence tokens
      Memory doc_view = doc;
      for (int s = i + 1; s < S; ++s) doc_view.valid_mask[s] = 0;
      for (int j = 0; j < T; ++j) {
        const size_t flat = static_cast<size_t>(i) * T + j;
        if (!ex.src_mask[flat]) continue;
        const Tensor x = embedding_.lookup(ex.src_input_ids[flat]);
        HierStepOutput out = hier_nse_step(
            x, bank[i], doc_view, encoder_.read, encoder_.attn_word,
            encoder_.attn_doc, encoder_.compose, encoder_.write, enc_states);
        bank[i] = out.word_mem;
        doc_view = out.doc_mem;
        if (trace) trace->writes.push_back(out.h_t);
      }
      doc.slots = doc_view.slots;
    }

    // assemble the decoder's word-level memory: row (i*T + j) of the
    // concatenation is row j of sentence i's memory
    std::vector<Tensor> slot_mats;
    std::vector<uint8_t> concat_mask;
    for (int i = 0; i < S; ++i) {
      slot_mats.push_back(bank[i].slots);
      concat_mask.insert(concat_mask.end(), bank[i].valid_mask.begin(),
                         bank[i].valid_mask.end());
    }
    State st;
    st.hier = true;
    st.mem = Memory{vstack(slot_mats), std::move(concat_mask)};
    st.doc = doc;
    st.states = NseStates{decoder_.read.initial_state(),
                          decoder_.write.initial_state(),
                          decoder_.compose.initial_state()};
    return st;
  }

  ModelConfig cfg_;
  EmbeddingTable embedding_;
  NseStack encoder_;
  NseStack decoder_;
  PointerHead pointer_;
  Tensor w_proj_;
  Tensor b_proj_;
};

}  // namespace nsesum
