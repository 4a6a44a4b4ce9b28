#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "nsesum/checkpoint.hpp"
#include "nsesum/data.hpp"
#include "nsesum/model.hpp"
#include "nsesum/rouge.hpp"
#include "nsesum/tensor.hpp"

namespace nsesum {

enum class RewardVariant { rouge1, rouge2, rougeL };

inline RewardVariant parse_reward(const std::string& s) {
  if (s == "rouge1") return RewardVariant::rouge1;
  if (s == "rouge2") return RewardVariant::rouge2;
  if (s == "rougeL") return RewardVariant::rougeL;
  throw std::invalid_argument("unknown reward variant: " + s);
}

struct TrainConfig {
  double lr_mle = 0.001;
  double lr_rl = 5e-5;   // droppable to 1e-5 via flag
  double alpha = 1e-4;   // entropy regularization coefficient
  double mle_mix = 0.0;  // optional MLE weight mixed into the RL objective
  int batch_size = 16;
  int epochs = 10;
  int max_decode_len = 100;  // 300 for factored corpora
  double grad_clip_norm = 2.0;
  uint64_t seed = 1;
  RewardVariant reward = RewardVariant::rougeL;
};

// ---- Adam -------------------------------------------------------------------

// Standard Adam with bias correction. A tensor whose gradient contains a
// non-finite value is skipped for that step and counted.
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  AdamState& state() { return state_; }
  void restore_state(AdamState s) { state_ = std::move(s); }

  void step(std::vector<NamedParam>& params) {
    if (state_.slots.empty()) {
      state_.slots.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        state_.slots[i].m.assign(params[i].tensor.value().size(), 0.0);
        state_.slots[i].v.assign(params[i].tensor.value().size(), 0.0);
      }
    }
    if (state_.slots.size() != params.size())
      throw std::invalid_argument("adam_step: state/parameter count mismatch");
    ++state_.step;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.step));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.step));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& t = params[i].tensor;
      auto& slot = state_.slots[i];
      if (slot.m.size() != t.value().size())
        throw std::invalid_argument("adam_step: state dims mismatch for " +
                                    params[i].name);
      bool finite = true;
      for (double g : t.grad())
        if (!std::isfinite(g)) {
          finite = false;
          break;
        }
      if (!finite) {
        ++state_.skipped;
        continue;
      }
      for (size_t j = 0; j < t.value().size(); ++j) {
        const double g = t.grad()[j];
        slot.m[j] = beta1_ * slot.m[j] + (1.0 - beta1_) * g;
        slot.v[j] = beta2_ * slot.v[j] + (1.0 - beta2_) * g * g;
        const double mhat = slot.m[j] / bc1;
        const double vhat = slot.v[j] / bc2;
        t.value()[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  AdamState state_;
};

// Scales all gradients so the global norm does not exceed `max_norm`;
// direction is preserved. Returns the pre-clip norm.
inline double clip_gradients(std::vector<NamedParam>& params,
                             double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.tensor.grad()) g *= s;
  }
  return norm;
}

inline void zero_gradients(std::vector<NamedParam>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

// ---- losses -----------------------------------------------------------------

// Teacher-forced cross entropy: mean over non-PAD target positions of
// -log p(target) under the extended distribution. Gold previous tokens
// are fed back (OOV gold embeds as UNK inside decode_step).
inline Tensor mle_loss(const Model& model, const std::vector<Example>& batch) {
  std::vector<Tensor> terms;
  long long positions = 0;
  for (const auto& ex : batch) {
    if (ex.tgt_ids.empty())
      throw std::invalid_argument("mle_loss: example without summary");
    Model::State st = model.encode(ex);
    int prev = Vocabulary::kStart;
    for (int target : ex.tgt_ids) {
      Model::StepResult out = model.decode_step(st, prev, ex);
      terms.push_back(neg_log_pick(out.dist, target));
      ++positions;
      prev = target;
    }
  }
  Tensor total = terms.front();
  for (size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return scale(total, 1.0 / static_cast<double>(positions));
}

// ---- decoding ---------------------------------------------------------------

struct DecodeResult {
  std::vector<int> ids;            // extended ids, STOP excluded
  std::vector<double> log_probs;   // one per decode step (incl. STOP step)
  std::vector<double> entropies;
  bool finished = false;
  // populated only when decoding with gradient recording (RL)
  std::vector<Tensor> nll_terms;
  std::vector<Tensor> entropy_terms;
};

inline std::vector<std::string> ids_to_tokens(const std::vector<int>& ids,
                                              const Vocabulary& vocab,
                                              const ExtendedVocabMap& oov) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids)
    out.push_back(id < vocab.size() ? vocab.token(id) : oov.token(id));
  return out;
}

// Argmax decode; ties break toward the lowest id.
inline DecodeResult greedy_decode(const Model& model, const Example& ex,
                                  int max_len) {
  NoGradGuard ng;
  DecodeResult res;
  Model::State st = model.encode(ex);
  int prev = Vocabulary::kStart;
  for (int t = 0; t < max_len + 1; ++t) {
    Model::StepResult out = model.decode_step(st, prev, ex);
    const auto& p = out.dist.value();
    int best = 0;
    for (int i = 1; i < static_cast<int>(p.size()); ++i)
      if (p[i] > p[best]) best = i;
    res.log_probs.push_back(std::log(std::max(p[best], 1e-12)));
    res.entropies.push_back(entropy(out.dist).item());
    if (best == Vocabulary::kStop) {
      res.finished = true;
      break;
    }
    res.ids.push_back(best);
    if (static_cast<int>(res.ids.size()) >= max_len) break;
    prev = best;
  }
  return res;
}

// Ancestral sampling at temperature 1, recording per-step log-probs and
// entropies. With record_grads the per-step loss terms stay on the tape.
inline DecodeResult sample_decode(const Model& model, const Example& ex,
                                  int max_len, Rng& rng,
                                  bool record_grads = false) {
  std::unique_ptr<NoGradGuard> ng;
  if (!record_grads) ng = std::make_unique<NoGradGuard>();
  DecodeResult res;
  Model::State st = model.encode(ex);
  int prev = Vocabulary::kStart;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int t = 0; t < max_len + 1; ++t) {
    Model::StepResult out = model.decode_step(st, prev, ex);
    const auto& p = out.dist.value();
    double u = unit(rng);
    int pick = static_cast<int>(p.size()) - 1;
    double acc = 0.0;
    for (int i = 0; i < static_cast<int>(p.size()); ++i) {
      acc += p[i];
      if (u <= acc) {
        pick = i;
        break;
      }
    }
    const Tensor nll = neg_log_pick(out.dist, pick);
    const Tensor ent = entropy(out.dist);
    res.log_probs.push_back(-nll.item());
    res.entropies.push_back(ent.item());
    if (record_grads) {
      res.nll_terms.push_back(nll);
      res.entropy_terms.push_back(ent);
    }
    if (pick == Vocabulary::kStop) {
      res.finished = true;
      break;
    }
    res.ids.push_back(pick);
    if (static_cast<int>(res.ids.size()) >= max_len) break;
    prev = pick;
  }
  return res;
}

// ---- self-critical loss -----------------------------------------------------

inline double reward_f1(const RougeReport& r, RewardVariant variant) {
  switch (variant) {
    case RewardVariant::rouge1: return r.rouge1.f1;
    case RewardVariant::rouge2: return r.rouge2.f1;
    case RewardVariant::rougeL: return r.rougeL.f1;
  }
  return 0.0;
}

inline double sequence_reward(const std::vector<std::string>& reference,
                              const std::vector<std::string>& candidate,
                              RewardVariant variant) {
  if (candidate.empty() || reference.empty()) return 0.0;
  return reward_f1(score_pair(reference, candidate), variant);
}

// L = (r(sampled) - r(greedy)) * sum_t -log p(sampled_t) - alpha * sum_t H_t.
// The advantage is a constant: no gradient flows through the rewards.
inline Tensor self_critic_loss(const DecodeResult& sampled,
                               const DecodeResult& greedy,
                               const std::vector<std::string>& sampled_tokens,
                               const std::vector<std::string>& greedy_tokens,
                               const std::vector<std::string>& reference,
                               double alpha, RewardVariant variant) {
  if (sampled.nll_terms.empty())
    throw std::invalid_argument(
        "self_critic_loss: sampled decode has no gradient terms");
  const double advantage =
      sequence_reward(reference, sampled_tokens, variant) -
      sequence_reward(reference, greedy_tokens, variant);
  Tensor nll_sum = sampled.nll_terms.front();
  for (size_t i = 1; i < sampled.nll_terms.size(); ++i)
    nll_sum = add(nll_sum, sampled.nll_terms[i]);
  Tensor ent_sum = sampled.entropy_terms.front();
  for (size_t i = 1; i < sampled.entropy_terms.size(); ++i)
    ent_sum = add(ent_sum, sampled.entropy_terms[i]);
  return add(scale(nll_sum, advantage), scale(ent_sum, -alpha));
}

// ---- training loop ----------------------------------------------------------

enum class TrainMode { mle, rl };

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  RougeReport dev_rouge;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::string metrics_log;  // tab-separated lines
  bool aborted_nan = false;
  int best_epoch = -1;
};

inline std::string format_metrics_line(int epoch, const std::string& split,
                                       double loss, const RougeReport& r) {
  std::ostringstream os;
  os << epoch << '\t' << split << '\t' << std::fixed << std::setprecision(6)
     << loss << '\t' << r.rouge1.f1 << '\t' << r.rouge2.f1 << '\t'
     << r.rougeL.f1;
  return os.str();
}

class Trainer {
 public:
  Trainer(Model& model, const Vocabulary& vocab, TrainConfig cfg)
      : model_(model), vocab_(vocab), cfg_(cfg) {}

  // Full training pass. mode == rl requires the model to come from an
  // existing supervised checkpoint (enforced by the CLI layer).
  TrainResult run(const std::vector<Example>& train,
                  const std::vector<Example>& dev, TrainMode mode,
                  const std::string& checkpoint_path = "",
                  std::ostream* log = nullptr) {
    TrainResult result;
    AdamOptimizer adam(mode == TrainMode::mle ? cfg_.lr_mle : cfg_.lr_rl);
    Rng rng(cfg_.seed);
    auto params = model_.params();
    // dev score to minimize: dev loss for mle, negated dev ROUGE-L for rl
    double best_score = std::numeric_limits<double>::infinity();
    std::ostringstream metrics;

    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double loss_sum = 0.0;
      long long loss_count = 0;
      for (size_t start = 0; start < order.size();
           start += static_cast<size_t>(cfg_.batch_size)) {
        std::vector<Example> batch;
        for (size_t i = start;
             i < std::min(order.size(),
                          start + static_cast<size_t>(cfg_.batch_size));
             ++i)
          batch.push_back(train[order[i]]);
        Tape::active().reset();
        zero_gradients(params);
        Tensor loss = (mode == TrainMode::mle) ? mle_loss(model_, batch)
                                               : rl_batch_loss(batch, rng);
        const double loss_val = loss.item();
        if (!std::isfinite(loss_val)) {
          result.aborted_nan = true;
          if (log) *log << "abort: non-finite loss at epoch " << epoch << "\n";
          result.metrics_log = metrics.str();
          return result;
        }
        loss_sum += loss_val;
        ++loss_count;
        backward(loss);
        clip_gradients(params, cfg_.grad_clip_norm);
        adam.step(params);
      }
      Tape::active().reset();

      EpochMetrics em;
      em.epoch = epoch;
      em.train_loss = loss_sum / std::max(1LL, loss_count);
      em.dev_loss = eval_loss(dev);
      em.dev_rouge = eval_rouge(dev);
      result.history.push_back(em);
      metrics << format_metrics_line(epoch, "train", em.train_loss,
                                     RougeReport{})
              << "\n"
              << format_metrics_line(epoch, "dev", em.dev_loss, em.dev_rouge)
              << "\n";
      if (log)
        *log << format_metrics_line(epoch, "dev", em.dev_loss, em.dev_rouge)
             << "\n";

      const double score = (mode == TrainMode::mle) ? em.dev_loss
                                                    : -em.dev_rouge.rougeL.f1;
      if (score < best_score) {
        best_score = score;
        result.best_epoch = epoch;
        if (!checkpoint_path.empty())
          save_checkpoint(checkpoint_path, model_, &adam.state());
      }
    }
    result.metrics_log = metrics.str();
    return result;
  }

  double eval_loss(const std::vector<Example>& examples) {
    if (examples.empty()) return 0.0;
    NoGradGuard ng;
    Tape::active().reset();
    return mle_loss(model_, examples).item();
  }

  RougeReport eval_rouge(const std::vector<Example>& examples) {
    if (examples.empty()) return RougeReport{};
    std::vector<std::pair<TokenList, TokenList>> pairs;
    for (const auto& ex : examples) {
      DecodeResult d = greedy_decode(model_, ex, cfg_.max_decode_len);
      pairs.emplace_back(ex.tgt_tokens, ids_to_tokens(d.ids, vocab_, ex.oov));
    }
    return corpus_rouge(pairs);
  }

 private:
  Tensor rl_batch_loss(const std::vector<Example>& batch, Rng& rng) {
    std::vector<Tensor> terms;
    for (const auto& ex : batch) {
      DecodeResult greedy = greedy_decode(model_, ex, cfg_.max_decode_len);
      DecodeResult sampled =
          sample_decode(model_, ex, cfg_.max_decode_len, rng, true);
      Tensor loss = self_critic_loss(
          sampled, greedy, ids_to_tokens(sampled.ids, vocab_, ex.oov),
          ids_to_tokens(greedy.ids, vocab_, ex.oov), ex.tgt_tokens, cfg_.alpha,
          cfg_.reward);
      if (cfg_.mle_mix > 0.0)
        loss = add(loss, scale(mle_loss(model_, {ex}), cfg_.mle_mix));
      terms.push_back(loss);
    }
    Tensor total = terms.front();
    for (size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
    return scale(total, 1.0 / static_cast<double>(terms.size()));
  }

  Model& model_;
  const Vocabulary& vocab_;
  TrainConfig cfg_;
};

}  // namespace nsesum
