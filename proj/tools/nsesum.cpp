// Command-line surface for the NSE summarization pipeline:
// preprocess, build-vocab, train, evaluate, summarize, rouge.

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "nsesum/config.hpp"
#include "nsesum/checkpoint.hpp"
#include "nsesum/data.hpp"
#include "nsesum/model.hpp"
#include "nsesum/rouge.hpp"
#include "nsesum/training.hpp"

using namespace nsesum;

namespace {

struct SharedFlags {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value, win over the config file
};

RunConfig resolve_config(const SharedFlags& shared) {
  RunConfig cfg;
  if (!shared.config_path.empty()) cfg.load_file(shared.config_path);
  for (const auto& kv : shared.overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got \"" + kv +
                                  "\"");
    cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  cfg.finalize();
  return cfg;
}

void add_shared(CLI::App* cmd, SharedFlags& shared) {
  cmd->add_option("--config", shared.config_path,
                  "flat key=value config file");
  cmd->add_option("--set", shared.overrides,
                  "config override key=value (repeatable)");
}

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

std::vector<Example> shape_corpus(const std::vector<CorpusDoc>& docs,
                                  bool hier, const Vocabulary& vocab,
                                  const DataConfig& dcfg) {
  std::vector<Example> out;
  out.reserve(docs.size());
  for (const auto& d : docs)
    out.push_back(shape_example(d.article, d.summary, hier, vocab, dcfg));
  return out;
}

int cmd_preprocess(const RunConfig& cfg, const std::string& input,
                   const std::string& out_path) {
  const auto docs = read_corpus(input);
  if (docs.empty()) throw std::runtime_error("preprocess: empty corpus");
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("preprocess: cannot write " + out_path);

  size_t lines = 0, skipped_lines = 0, truncated_articles = 0;
  long long article_tokens = 0, summary_tokens = 0, sentences = 0;
  size_t factored_skips = 0;
  for (const auto& d : docs) {
    try {
      size_t sk = 0;
      std::vector<std::string> art =
          tokenize_flat(d.article, cfg.data.mode, cfg.data.article_cap(), &sk);
      factored_skips += sk;
      if (cfg.data.mode == CorpusMode::factored && sk > 0)
        throw std::invalid_argument("malformed factored token");
      std::vector<std::string> sum;
      if (!trim(d.summary).empty()) {
        sum = tokenize_flat(d.summary, cfg.data.mode, cfg.data.summary_cap(),
                            &sk);
        if (cfg.data.mode == CorpusMode::factored && sk > 0)
          throw std::invalid_argument("malformed factored token");
      }
      const auto full = split_ws(d.article);
      if (cfg.data.mode == CorpusMode::plain &&
          static_cast<int>(full.size()) > cfg.data.article_cap())
        ++truncated_articles;
      if (cfg.data.mode == CorpusMode::factored &&
          static_cast<int>(art.size()) == cfg.data.article_cap() -
                                              cfg.data.article_cap() % 3)
        ++truncated_articles;
      article_tokens += static_cast<long long>(art.size());
      summary_tokens += static_cast<long long>(sum.size());
      for (const auto& t : art)
        if (sentence_terminal(t)) ++sentences;
      out << join_tokens(art) << '\t' << join_tokens(sum) << '\n';
      ++lines;
    } catch (const std::invalid_argument&) {
      ++skipped_lines;
    }
  }
  std::cout << "lines " << lines << "\nskipped " << skipped_lines
            << "\narticle_tokens " << article_tokens << "\nsummary_tokens "
            << summary_tokens << "\nsentences " << sentences
            << "\ntruncated_articles " << truncated_articles << "\n";
  if (lines == 0) throw std::runtime_error("preprocess: no usable lines");
  return 0;
}

int cmd_build_vocab(const RunConfig& cfg, const std::string& input,
                    const std::string& out_path) {
  const auto docs = read_corpus(input);
  if (docs.empty()) throw std::runtime_error("build-vocab: empty corpus");
  const Vocabulary vocab =
      build_vocab_from_corpus(docs, cfg.data.mode, cfg.vocab_size);
  vocab.save(out_path);
  std::cout << "vocab_size " << vocab.size() << "\n";
  return 0;
}

int cmd_train(RunConfig cfg, const std::string& corpus_path,
              const std::string& dev_path, const std::string& vocab_path,
              const std::string& embeddings_path,
              const std::string& checkpoint_path,
              const std::string& init_checkpoint, const std::string& train_mode,
              const std::string& metrics_path) {
  const TrainMode mode = train_mode == "rl" ? TrainMode::rl : TrainMode::mle;
  if (train_mode != "rl" && train_mode != "mle")
    throw std::invalid_argument("train: mode must be mle or rl");
  if (mode == TrainMode::rl && init_checkpoint.empty())
    throw std::invalid_argument(
        "train: rl mode requires --init-checkpoint from a supervised run");

  const Vocabulary vocab = Vocabulary::load(vocab_path);
  cfg.vocab_size = vocab.size();

  Model model;
  if (!init_checkpoint.empty()) {
    LoadedCheckpoint loaded = load_checkpoint(init_checkpoint);
    if (variant_name(loaded.model.config().variant) != cfg.variant)
      throw std::runtime_error("train: checkpoint variant " +
                               variant_name(loaded.model.config().variant) +
                               " != requested " + cfg.variant);
    model = std::move(loaded.model);
  } else {
    EmbeddingTable emb = load_embeddings(embeddings_path, vocab, cfg.dim,
                                         cfg.train.seed);
    model = Model(cfg.model_config(), std::move(emb));
  }

  const bool hier = model.config().variant == ModelVariant::hier;
  const auto train_docs = read_corpus(corpus_path);
  if (train_docs.empty()) throw std::runtime_error("train: empty corpus");
  const auto train_ex = shape_corpus(train_docs, hier, vocab, cfg.data);
  std::vector<Example> dev_ex;
  if (!dev_path.empty())
    dev_ex = shape_corpus(read_corpus(dev_path), hier, vocab, cfg.data);

  std::cout << "lr " << (mode == TrainMode::mle ? cfg.train.lr_mle
                                                : cfg.train.lr_rl)
            << "\n";
  Trainer trainer(model, vocab, cfg.train);
  TrainResult result =
      trainer.run(train_ex, dev_ex, mode, checkpoint_path, &std::cout);
  if (!metrics_path.empty()) {
    std::ofstream mout(metrics_path);
    mout << result.metrics_log;
  }
  if (result.aborted_nan)
    throw std::runtime_error("train: aborted on non-finite loss");
  if (checkpoint_path.empty() || result.best_epoch < 0)
    save_checkpoint(checkpoint_path.empty() ? "model.ckpt" : checkpoint_path,
                    model);
  return 0;
}

void write_rouge_report(std::ostream& out,
                        const std::vector<std::pair<TokenList, TokenList>>&
                            pairs) {
  out << std::fixed << std::setprecision(6);
  auto emit = [&](const std::string& tag, const char* name,
                  const RougeScore& s) {
    out << tag << '\t' << name << '\t' << s.precision << '\t' << s.recall
        << '\t' << s.f1 << '\n';
  };
  for (size_t i = 0; i < pairs.size(); ++i) {
    const RougeReport r = score_pair(pairs[i].first, pairs[i].second);
    emit(std::to_string(i), "rouge1", r.rouge1);
    emit(std::to_string(i), "rouge2", r.rouge2);
    emit(std::to_string(i), "rougeL", r.rougeL);
  }
  const RougeReport avg = corpus_rouge(pairs);
  emit("avg", "rouge1", avg.rouge1);
  emit("avg", "rouge2", avg.rouge2);
  emit("avg", "rougeL", avg.rougeL);
}

int cmd_evaluate(RunConfig cfg, const std::string& checkpoint_path,
                 const std::string& corpus_path, const std::string& vocab_path,
                 const std::string& out_path) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
  Model& model = loaded.model;
  const Vocabulary vocab = Vocabulary::load(vocab_path);
  if (vocab.size() != model.config().vocab_size)
    throw std::runtime_error("evaluate: vocabulary size " +
                             std::to_string(vocab.size()) +
                             " != checkpoint vocab_size " +
                             std::to_string(model.config().vocab_size));
  cfg.mode = model.config().mode == CorpusMode::factored ? "factored" : "plain";
  cfg.finalize();
  cfg.data.max_sentences = model.config().max_sentences;
  cfg.data.max_words = model.config().max_words;

  const auto docs = read_corpus(corpus_path);
  if (docs.empty()) throw std::runtime_error("evaluate: empty test corpus");
  const bool hier = model.config().variant == ModelVariant::hier;
  std::vector<std::pair<TokenList, TokenList>> pairs;
  std::ofstream hyps(out_path + ".hyps");
  if (!hyps) throw std::runtime_error("evaluate: cannot write " + out_path +
                                      ".hyps");
  for (const auto& d : docs) {
    const Example ex = shape_example(d.article, d.summary, hier, vocab,
                                     cfg.data);
    if (ex.tgt_tokens.empty())
      throw std::runtime_error("evaluate: example without reference summary");
    DecodeResult dec = greedy_decode(model, ex, cfg.train.max_decode_len);
    const TokenList cand = ids_to_tokens(dec.ids, vocab, ex.oov);
    hyps << join_tokens(cand) << '\n';
    pairs.emplace_back(ex.tgt_tokens, cand);
  }
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("evaluate: cannot write " + out_path);
  write_rouge_report(out, pairs);
  write_rouge_report(std::cout, pairs);
  return 0;
}

int cmd_summarize(RunConfig cfg, const std::string& checkpoint_path,
                  const std::string& article_path,
                  const std::string& vocab_path) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
  Model& model = loaded.model;
  const Vocabulary vocab = Vocabulary::load(vocab_path);
  if (vocab.size() != model.config().vocab_size)
    throw std::runtime_error("summarize: vocabulary size mismatch");
  const bool factored = model.config().mode == CorpusMode::factored;
  cfg.mode = factored ? "factored" : "plain";
  cfg.finalize();
  cfg.data.max_sentences = model.config().max_sentences;
  cfg.data.max_words = model.config().max_words;

  const auto docs = read_corpus(article_path);
  if (docs.empty()) throw std::runtime_error("summarize: empty input");
  const bool hier = model.config().variant == ModelVariant::hier;
  for (const auto& d : docs) {
    const Example ex = shape_example(d.article, "", hier, vocab, cfg.data);
    DecodeResult dec = greedy_decode(model, ex, cfg.train.max_decode_len);
    const TokenList toks = ids_to_tokens(dec.ids, vocab, ex.oov);
    std::cout << join_tokens(toks) << '\n';
    if (factored) {
      // surface projection: every 1st of 3 stream tokens
      TokenList surfaces;
      for (size_t i = 0; i < toks.size(); i += 3) surfaces.push_back(toks[i]);
      std::cout << join_tokens(surfaces) << '\n';
    }
  }
  return 0;
}

TokenList read_token_lines(const std::string& path,
                           std::vector<TokenList>& out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("rouge: cannot read " + path);
  std::string line;
  while (std::getline(in, line)) out.push_back(split_ws(lowercase(line)));
  return {};
}

int cmd_rouge(const std::string& ref_path, const std::string& cand_path,
              const std::string& out_path) {
  std::vector<TokenList> refs, cands;
  read_token_lines(ref_path, refs);
  read_token_lines(cand_path, cands);
  if (refs.size() != cands.size())
    throw std::runtime_error("rouge: file line counts differ (" +
                             std::to_string(refs.size()) + " vs " +
                             std::to_string(cands.size()) + ")");
  if (refs.empty()) throw std::runtime_error("rouge: empty input");
  std::vector<std::pair<TokenList, TokenList>> pairs;
  for (size_t i = 0; i < refs.size(); ++i)
    pairs.emplace_back(refs[i], cands[i]);
  if (out_path.empty()) {
    write_rouge_report(std::cout, pairs);
  } else {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("rouge: cannot write " + out_path);
    write_rouge_report(out, pairs);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memory-augmented NSE summarization pipeline"};
  app.require_subcommand(1);

  SharedFlags shared;
  std::string input, out_path, dev_path, vocab_path, embeddings_path;
  std::string checkpoint_path, init_checkpoint, article_path;
  std::string train_mode = "mle";
  std::string variant_flag, mode_flag;
  std::string seed_flag;
  std::string ref_path, cand_path;

  auto* preprocess = app.add_subcommand("preprocess", "normalize a corpus");
  add_shared(preprocess, shared);
  preprocess->add_option("--input", input)->required();
  preprocess->add_option("--out", out_path)->required();
  preprocess->add_option("--mode", mode_flag);

  auto* build_vocab = app.add_subcommand("build-vocab", "build a vocabulary");
  add_shared(build_vocab, shared);
  build_vocab->add_option("--input", input)->required();
  build_vocab->add_option("--out", out_path)->required();
  build_vocab->add_option("--mode", mode_flag);
  build_vocab->add_option("--vocab-size", shared.overrides)
      ->transform([](std::string s) { return "vocab_size=" + s; });

  auto* train = app.add_subcommand("train", "train a model");
  add_shared(train, shared);
  train->add_option("--corpus", input)->required();
  train->add_option("--dev", dev_path);
  train->add_option("--vocab", vocab_path)->required();
  train->add_option("--embeddings", embeddings_path);
  train->add_option("--checkpoint", checkpoint_path)->required();
  train->add_option("--init-checkpoint", init_checkpoint);
  train->add_option("--train-mode", train_mode, "mle or rl");
  train->add_option("--out", out_path, "metrics log path");
  train->add_option("--variant", variant_flag);
  train->add_option("--mode", mode_flag);
  train->add_option("--seed", seed_flag);

  auto* evaluate = app.add_subcommand("evaluate", "greedy-decode and score");
  add_shared(evaluate, shared);
  evaluate->add_option("--checkpoint", checkpoint_path)->required();
  evaluate->add_option("--corpus", input)->required();
  evaluate->add_option("--vocab", vocab_path)->required();
  evaluate->add_option("--out", out_path)->required();

  auto* summarize = app.add_subcommand("summarize", "summarize articles");
  add_shared(summarize, shared);
  summarize->add_option("--checkpoint", checkpoint_path)->required();
  summarize->add_option("--input", input)->required();
  summarize->add_option("--vocab", vocab_path)->required();

  auto* rouge_cmd = app.add_subcommand("rouge", "score parallel files");
  rouge_cmd->add_option("--reference", ref_path)->required();
  rouge_cmd->add_option("--candidate", cand_path)->required();
  rouge_cmd->add_option("--out", out_path);

  CLI11_PARSE(app, argc, argv);

  try {
    if (!variant_flag.empty()) shared.overrides.push_back("variant=" + variant_flag);
    if (!mode_flag.empty()) shared.overrides.push_back("mode=" + mode_flag);
    if (!seed_flag.empty()) shared.overrides.push_back("seed=" + seed_flag);
    RunConfig cfg = resolve_config(shared);
    if (preprocess->parsed()) return cmd_preprocess(cfg, input, out_path);
    if (build_vocab->parsed()) return cmd_build_vocab(cfg, input, out_path);
    if (train->parsed())
      return cmd_train(cfg, input, dev_path, vocab_path, embeddings_path,
                       checkpoint_path, init_checkpoint, train_mode, out_path);
    if (evaluate->parsed())
      return cmd_evaluate(cfg, checkpoint_path, input, vocab_path, out_path);
    if (summarize->parsed())
      return cmd_summarize(cfg, checkpoint_path, input, vocab_path);
    if (rouge_cmd->parsed()) return cmd_rouge(ref_path, cand_path, out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
