#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nsesum/checkpoint.hpp"
#include "nsesum/data.hpp"
#include "nsesum/model.hpp"
#include "nsesum/training.hpp"

using namespace nsesum;

namespace {

Vocabulary tiny_vocab(const std::vector<std::string>& words) {
  std::map<std::string, long long> counts;
  long long c = 100;
  for (const auto& w : words) counts[w] = c--;
  return Vocabulary::build(counts, static_cast<int>(words.size()) + 4);
}

void zero_all(std::vector<NamedParam> params) {
  for (auto& p : params)
    for (double& v : p.tensor.value()) v = 0.0;
}

// A model whose parameters are all zero produces closed-form decoder
// distributions: p_vocab uniform 1/V, p_gen = sigmoid(0) = 1/2, and the
// copy distribution uniform over the source slots.
Model zeroed_model(const Vocabulary& vocab, int dim = 3) {
  ModelConfig mcfg;
  mcfg.variant = ModelVariant::improved;
  mcfg.vocab_size = vocab.size();
  mcfg.dim = dim;
  mcfg.seed = 11;
  Model model(mcfg);
  zero_all(model.params());
  return model;
}

std::vector<NamedParam> single_param(const std::string& name,
                                     std::vector<double> vals,
                                     std::vector<double> grads) {
  Tensor t = Tensor::vector(std::move(vals), true);
  for (size_t i = 0; i < grads.size(); ++i) t.grad()[i] = grads[i];
  return {NamedParam{name, t}};
}

}  // namespace

TEST_CASE("adam optimizer") {
  SECTION("zero gradients leave parameters unchanged") {
    auto params = single_param("w", {1.0, -2.0, 0.5}, {0.0, 0.0, 0.0});
    AdamOptimizer adam(0.01);
    adam.step(params);
    REQUIRE(params[0].tensor.value() ==
            std::vector<double>{1.0, -2.0, 0.5});
    REQUIRE(adam.state().step == 1);
    REQUIRE(adam.state().skipped == 0);
  }
  SECTION("first step matches the bias-corrected closed form") {
    const std::vector<double> x0 = {1.0, -2.0, 0.5};
    const std::vector<double> g = {0.3, -0.7, 0.0};
    const double lr = 0.01, eps = 1e-8;
    auto params = single_param("w", x0, g);
    AdamOptimizer adam(lr);
    adam.step(params);
    for (size_t j = 0; j < x0.size(); ++j) {
      // bias correction cancels on step one: mhat = g, vhat = g^2
      const double want = x0[j] - lr * g[j] / (std::abs(g[j]) + eps);
      REQUIRE(params[0].tensor.value()[j] == Catch::Approx(want).margin(1e-12));
      const double delta = params[0].tensor.value()[j] - x0[j];
      REQUIRE(std::abs(delta) <= lr * (1.0 + 1e-6));
    }
  }
  SECTION("two steps with equal gradients match a sequential scalar oracle") {
    const double lr = 0.002, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const std::vector<double> g = {0.4, -1.3};
    auto params = single_param("w", {0.25, 0.75}, g);
    AdamOptimizer adam(lr);
    adam.step(params);
    for (size_t j = 0; j < g.size(); ++j) params[0].tensor.grad()[j] = g[j];
    adam.step(params);

    std::vector<double> x = {0.25, 0.75};
    for (size_t j = 0; j < g.size(); ++j) {
      double m = 0.0, v = 0.0;
      for (int t = 1; t <= 2; ++t) {
        m = b1 * m + (1.0 - b1) * g[j];
        v = b2 * v + (1.0 - b2) * g[j] * g[j];
        const double mhat = m / (1.0 - std::pow(b1, t));
        const double vhat = v / (1.0 - std::pow(b2, t));
        x[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
      REQUIRE(params[0].tensor.value()[j] ==
              Catch::Approx(x[j]).epsilon(1e-12));
    }
    REQUIRE(adam.state().step == 2);
  }
  SECTION("non-finite gradient skips that tensor and counts it") {
    auto params = single_param("w", {1.0, 2.0}, {0.5, 0.5});
    Tensor bad = Tensor::vector({3.0}, true);
    bad.grad()[0] = std::numeric_limits<double>::quiet_NaN();
    params.push_back({"bad", bad});
    AdamOptimizer adam(0.01);
    adam.step(params);
    REQUIRE(params[1].tensor.value()[0] == 3.0);
    REQUIRE(params[0].tensor.value()[0] != 1.0);
    REQUIRE(adam.state().skipped == 1);
  }
}

TEST_CASE("gradient clipping") {
  SECTION("norm above the cap rescales onto the cap, preserving direction") {
    auto params = single_param("w", {0.0, 0.0}, {3.0, 4.0});
    const double pre = clip_gradients(params, 2.0);
    REQUIRE(pre == Catch::Approx(5.0).epsilon(1e-12));
    REQUIRE(params[0].tensor.grad()[0] == Catch::Approx(1.2).epsilon(1e-12));
    REQUIRE(params[0].tensor.grad()[1] == Catch::Approx(1.6).epsilon(1e-12));
    // direction preserved: same positive ratio on every component
    REQUIRE(params[0].tensor.grad()[1] / params[0].tensor.grad()[0] ==
            Catch::Approx(4.0 / 3.0).epsilon(1e-12));
  }
  SECTION("norm within the cap is untouched") {
    auto params = single_param("w", {0.0, 0.0}, {0.3, -0.4});
    const double pre = clip_gradients(params, 2.0);
    REQUIRE(pre == Catch::Approx(0.5).epsilon(1e-12));
    REQUIRE(params[0].tensor.grad()[0] == 0.3);
    REQUIRE(params[0].tensor.grad()[1] == -0.4);
  }
}

TEST_CASE("mle loss") {
  Vocabulary vocab = tiny_vocab({"a", "b"});  // ids: a=4, b=5, V=6
  DataConfig dcfg;
  Model model = zeroed_model(vocab);
  const double V = 6.0;

  SECTION("zero-parameter model has a closed-form position-wise loss") {
    // two source slots -> copy mass 1/4 on each of a, b; p_vocab 1/6 each
    Example ex = shape_example("a b", "a", false, vocab, dcfg);
    REQUIRE(ex.tgt_ids == std::vector<int>{4, Vocabulary::kStop});
    Tape::active().reset();
    NoGradGuard ng;
    const double p_src = 0.5 / V + 0.25;   // 1/3
    const double p_other = 0.5 / V;        // 1/12
    const double want = 0.5 * (-std::log(p_src) - std::log(p_other));
    REQUIRE(mle_loss(model, {ex}).item() ==
            Catch::Approx(want).epsilon(1e-12));
  }
  SECTION("batch loss is the mean over all target positions") {
    Example ex1 = shape_example("a b", "a", false, vocab, dcfg);
    Example ex2 = shape_example("a b", "b a", false, vocab, dcfg);
    Tape::active().reset();
    NoGradGuard ng;
    const double p_src = 0.5 / V + 0.25;
    const double p_other = 0.5 / V;
    // ex1: targets {a, STOP}; ex2: targets {b, a, STOP} -> 5 positions
    const double want =
        (-std::log(p_src) - std::log(p_other) - std::log(p_src) -
         std::log(p_src) - std::log(p_other)) /
        5.0;
    REQUIRE(mle_loss(model, {ex1, ex2}).item() ==
            Catch::Approx(want).epsilon(1e-12));
  }
  SECTION("example without summary is rejected") {
    Example ex = shape_example("a b", "", false, vocab, dcfg);
    REQUIRE_THROWS_AS(mle_loss(model, {ex}), std::invalid_argument);
  }
}

TEST_CASE("mle loss gradient matches finite differences") {
  Vocabulary vocab = tiny_vocab({"a", "b"});
  DataConfig dcfg;
  ModelConfig mcfg;
  mcfg.variant = ModelVariant::improved;
  mcfg.vocab_size = vocab.size();
  mcfg.dim = 2;
  mcfg.seed = 23;
  Model model(mcfg);
  Example ex = shape_example("a b", "b a", false, vocab, dcfg);

  auto params = model.params();
  Tape::active().reset();
  zero_gradients(params);
  Tensor loss = mle_loss(model, {ex});
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) analytic.push_back(p.tensor.grad());
  Tape::active().reset();

  NoGradGuard ng;
  const double eps = 1e-5;
  double max_rel = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    auto& vals = params[i].tensor.value();
    for (size_t j = 0; j < vals.size(); ++j) {
      const double keep = vals[j];
      vals[j] = keep + eps;
      const double up = mle_loss(model, {ex}).item();
      vals[j] = keep - eps;
      const double down = mle_loss(model, {ex}).item();
      vals[j] = keep;
      const double fd = (up - down) / (2.0 * eps);
      const double denom = std::max({1.0, std::abs(fd),
                                     std::abs(analytic[i][j])});
      max_rel = std::max(max_rel, std::abs(fd - analytic[i][j]) / denom);
    }
  }
  REQUIRE(max_rel < 1e-4);
}

TEST_CASE("greedy decode") {
  Vocabulary vocab = tiny_vocab({"a", "b"});
  DataConfig dcfg;
  Model model = zeroed_model(vocab);

  SECTION("argmax follows the copy-boosted source token") {
    Example ex = shape_example("a", "", false, vocab, dcfg);
    Tape::active().reset();
    DecodeResult res = greedy_decode(model, ex, 3);
    REQUIRE(res.ids == std::vector<int>{4, 4, 4});
    REQUIRE_FALSE(res.finished);
    REQUIRE(res.log_probs.size() == 3);
    REQUIRE(res.log_probs[0] ==
            Catch::Approx(std::log(0.5 / 6 + 0.5)).epsilon(1e-12));
  }
  SECTION("exact tie between two ids emits the lower id") {
    // both source tokens receive identical mass 1/3
    Example ex = shape_example("a b", "", false, vocab, dcfg);
    Tape::active().reset();
    DecodeResult res = greedy_decode(model, ex, 1);
    REQUIRE(res.ids == std::vector<int>{4});
  }
  SECTION("STOP as argmax at step one yields an empty summary") {
    for (auto& p : model.params())
      if (p.name == "proj.b") p.tensor.value()[Vocabulary::kStop] = 50.0;
    Example ex = shape_example("a b", "", false, vocab, dcfg);
    Tape::active().reset();
    DecodeResult res = greedy_decode(model, ex, 5);
    REQUIRE(res.ids.empty());
    REQUIRE(res.finished);
    REQUIRE(res.log_probs.size() == 1);
    REQUIRE(res.log_probs[0] == Catch::Approx(std::log(0.5)).margin(1e-9));
  }
}

TEST_CASE("sample decode") {
  Vocabulary vocab = tiny_vocab({"a", "b"});  // V = 6, "a" = id 4
  DataConfig dcfg;
  Model model = zeroed_model(vocab);
  Example ex = shape_example("a", "", false, vocab, dcfg);
  Tape::active().reset();
  const double p_a = 0.5 / 6 + 0.5;  // 7/12
  const double p_other = 0.5 / 6;    // 1/12

  SECTION("recorded log-prob and entropy match the hand distribution") {
    Rng rng(3);
    DecodeResult res = sample_decode(model, ex, 1, rng);
    const int pick = res.finished ? Vocabulary::kStop : res.ids[0];
    const double p = pick == 4 ? p_a : p_other;
    REQUIRE(res.log_probs[0] == Catch::Approx(std::log(p)).epsilon(1e-12));
    const double want_h = -(p_a * std::log(p_a) + 5 * p_other *
                            std::log(p_other));
    REQUIRE(res.entropies[0] == Catch::Approx(want_h).epsilon(1e-12));
  }
  SECTION("empirical first-step frequencies match the distribution") {
    Rng rng(41);
    const int n = 10000;
    std::map<int, int> counts;
    for (int i = 0; i < n; ++i) {
      DecodeResult res = sample_decode(model, ex, 1, rng);
      ++counts[res.finished && res.ids.empty() ? Vocabulary::kStop
                                               : res.ids[0]];
    }
    auto within = [&](int id, double p) {
      const double sigma = std::sqrt(p * (1.0 - p) / n);
      return std::abs(counts[id] / static_cast<double>(n) - p) < 4.0 * sigma;
    };
    REQUIRE(within(4, p_a));
    for (int id : {0, 1, 2, 3, 5}) REQUIRE(within(id, p_other));
  }
  SECTION("identical seeds reproduce the decode exactly") {
    Rng r1(99), r2(99);
    DecodeResult a = sample_decode(model, ex, 8, r1);
    DecodeResult b = sample_decode(model, ex, 8, r2);
    REQUIRE(a.ids == b.ids);
    REQUIRE(a.log_probs == b.log_probs);
  }
  SECTION("record_grads keeps per-step loss terms on the tape") {
    Tape::active().reset();
    Rng rng(7);
    DecodeResult res = sample_decode(model, ex, 2, rng, true);
    REQUIRE(res.nll_terms.size() == res.log_probs.size());
    REQUIRE(res.entropy_terms.size() == res.entropies.size());
    Tape::active().reset();
  }
  SECTION("entropy of a uniform 4-way distribution is log 4") {
    REQUIRE(entropy(Tensor::vector({0.25, 0.25, 0.25, 0.25})).item() ==
            Catch::Approx(std::log(4.0)).epsilon(1e-12));
  }
}

TEST_CASE("self-critical loss") {
  const std::vector<std::string> ref = {"a", "b", "c"};
  const std::vector<std::string> samp08 = {"a", "b"};  // ROUGE-L F1 = 0.8
  const std::vector<std::string> greedy05 = {"a"};     // ROUGE-L F1 = 0.5

  SECTION("reward helper values") {
    REQUIRE(sequence_reward(ref, samp08, RewardVariant::rougeL) ==
            Catch::Approx(0.8).epsilon(1e-12));
    REQUIRE(sequence_reward(ref, greedy05, RewardVariant::rougeL) ==
            Catch::Approx(0.5).epsilon(1e-12));
    REQUIRE(sequence_reward(ref, {}, RewardVariant::rougeL) == 0.0);
  }
  SECTION("loss arithmetic: advantage 0.3 times total nll 2.0") {
    DecodeResult sampled, greedy;
    sampled.nll_terms = {Tensor::scalar(1.2), Tensor::scalar(0.8)};
    sampled.entropy_terms = {Tensor::scalar(0.4), Tensor::scalar(0.6)};
    Tensor loss = self_critic_loss(sampled, greedy, samp08, greedy05, ref,
                                   0.0, RewardVariant::rougeL);
    REQUIRE(loss.item() == Catch::Approx(0.3 * 2.0).epsilon(1e-12));
    // alpha linearity: raising alpha subtracts alpha * sum H
    Tensor with_alpha = self_critic_loss(sampled, greedy, samp08, greedy05,
                                         ref, 2e-4, RewardVariant::rougeL);
    REQUIRE(loss.item() - with_alpha.item() ==
            Catch::Approx(2e-4 * 1.0).epsilon(1e-9));
  }
  SECTION("missing gradient terms are rejected") {
    DecodeResult sampled, greedy;
    REQUIRE_THROWS_AS(self_critic_loss(sampled, greedy, samp08, greedy05,
                                       ref, 0.0, RewardVariant::rougeL),
                      std::invalid_argument);
  }
  SECTION("zero advantage kills the policy gradient") {
    Tape::active().reset();
    Tensor logits = Tensor::vector({0.3, -0.2, 0.5}, true);
    Tensor p = masked_softmax(logits, std::vector<uint8_t>{1, 1, 1});
    DecodeResult sampled, greedy;
    sampled.nll_terms = {neg_log_pick(p, 0), neg_log_pick(p, 2)};
    sampled.entropy_terms = {entropy(p), entropy(p)};
    Tensor loss = self_critic_loss(sampled, greedy, samp08, samp08, ref, 0.0,
                                   RewardVariant::rougeL);
    REQUIRE(loss.item() == Catch::Approx(0.0).margin(1e-15));
    backward(loss);
    for (double g : logits.grad()) REQUIRE(std::abs(g) < 1e-12);
    Tape::active().reset();
  }
  SECTION("rewards are gradient-free: scaling the advantage scales the grad") {
    auto grads_for = [&](const std::vector<std::string>& greedy_tokens) {
      Tape::active().reset();
      Tensor logits = Tensor::vector({0.3, -0.2, 0.5}, true);
      Tensor p = masked_softmax(logits, std::vector<uint8_t>{1, 1, 1});
      DecodeResult sampled, greedy;
      sampled.nll_terms = {neg_log_pick(p, 1)};
      sampled.entropy_terms = {entropy(p)};
      Tensor loss = self_critic_loss(sampled, greedy, samp08, greedy_tokens,
                                     ref, 0.0, RewardVariant::rougeL);
      backward(loss);
      std::vector<double> g = logits.grad();
      Tape::active().reset();
      return g;
    };
    const auto g1 = grads_for(greedy05);  // advantage 0.3
    const auto g2 = grads_for({"z"});     // advantage 0.8
    for (size_t i = 0; i < g1.size(); ++i)
      REQUIRE(g2[i] == Catch::Approx(g1[i] * (0.8 / 0.3)).margin(1e-12));
  }
}

TEST_CASE("metrics line format") {
  RougeReport r;
  r.rouge1.f1 = 0.5;
  r.rouge2.f1 = 0.25;
  r.rougeL.f1 = 1.0 / 3.0;
  REQUIRE(format_metrics_line(1, "dev", 0.1234567, r) ==
          "1\tdev\t0.123457\t0.500000\t0.250000\t0.333333");
  REQUIRE(format_metrics_line(12, "train", 2.0, RougeReport{}) ==
          "12\ttrain\t2.000000\t0.000000\t0.000000\t0.000000");
}

TEST_CASE("trainer") {
  Vocabulary vocab = tiny_vocab({"a", "b", "c", "d", "."});
  DataConfig dcfg;
  ModelConfig mcfg;
  mcfg.variant = ModelVariant::improved;
  mcfg.vocab_size = vocab.size();
  mcfg.dim = 4;
  mcfg.seed = 31;

  std::vector<Example> train = {
      shape_example("a b c", "a b", false, vocab, dcfg),
      shape_example("b c d", "b c", false, vocab, dcfg),
      shape_example("c d a", "c d", false, vocab, dcfg),
      shape_example("d a b", "d a", false, vocab, dcfg),
  };
  std::vector<Example> dev = {
      shape_example("a b c", "a b", false, vocab, dcfg),
      shape_example("c d a", "c d", false, vocab, dcfg),
  };

  TrainConfig tcfg;
  tcfg.batch_size = 2;
  tcfg.epochs = 2;
  tcfg.max_decode_len = 4;
  tcfg.seed = 17;

  SECTION("one mle epoch reduces the training loss") {
    Model model(mcfg);
    TrainConfig one = tcfg;
    one.epochs = 1;
    Trainer trainer(model, vocab, one);
    const double before = trainer.eval_loss(train);
    TrainResult res = trainer.run(train, dev, TrainMode::mle);
    REQUIRE_FALSE(res.aborted_nan);
    REQUIRE(trainer.eval_loss(train) < before);
  }
  SECTION("mle run: history, metrics format, checkpoint") {
    const auto path = (std::filesystem::temp_directory_path() /
                       "nsesum_trainer_test.ckpt")
                          .string();
    std::filesystem::remove(path);
    Model model(mcfg);
    Trainer trainer(model, vocab, tcfg);
    TrainResult res = trainer.run(train, dev, TrainMode::mle, path);
    REQUIRE_FALSE(res.aborted_nan);
    REQUIRE(res.history.size() == 2);
    REQUIRE(res.best_epoch >= 1);

    std::istringstream lines(res.metrics_log);
    std::string line;
    int count = 0;
    while (std::getline(lines, line)) {
      ++count;
      std::vector<std::string> fields;
      std::istringstream ls(line);
      std::string f;
      while (std::getline(ls, f, '\t')) fields.push_back(f);
      REQUIRE(fields.size() == 6);
      REQUIRE((fields[1] == "train" || fields[1] == "dev"));
      REQUIRE(std::stoi(fields[0]) == (count + 1) / 2);
    }
    REQUIRE(count == 4);

    REQUIRE(std::filesystem::exists(path));
    LoadedCheckpoint loaded = load_checkpoint(path);
    REQUIRE(loaded.has_adam);
    REQUIRE(loaded.model.params().size() == model.params().size());
    std::filesystem::remove(path);
  }
  SECTION("identical seeds give identical metric logs") {
    Model m1(mcfg), m2(mcfg);
    TrainResult r1 = Trainer(m1, vocab, tcfg).run(train, dev, TrainMode::mle);
    TrainResult r2 = Trainer(m2, vocab, tcfg).run(train, dev, TrainMode::mle);
    REQUIRE(r1.metrics_log == r2.metrics_log);
    REQUIRE_FALSE(r1.metrics_log.empty());
  }
  SECTION("rl mode runs and logs metrics") {
    Model model(mcfg);
    TrainConfig rl = tcfg;
    rl.epochs = 1;
    rl.max_decode_len = 3;
    Trainer trainer(model, vocab, rl);
    TrainResult res = trainer.run(train, dev, TrainMode::rl);
    REQUIRE_FALSE(res.aborted_nan);
    REQUIRE(res.history.size() == 1);
    REQUIRE(res.best_epoch == 1);
  }
}
