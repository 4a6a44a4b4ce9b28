#pragma once

#include <fstream>
#include <set>
#include <string>

#include "nsesum/data.hpp"
#include "nsesum/model.hpp"
#include "nsesum/training.hpp"

namespace nsesum {

// Run-wide settings mirroring the training/data/model knobs. Populated in
// precedence order: CLI flag > config file > default.
struct RunConfig {
  std::string variant = "improved";  // vanilla | improved | hier
  std::string mode = "plain";        // plain | factored
  int vocab_size = 50000;
  int dim = 300;
  TrainConfig train;
  DataConfig data;

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.variant = parse_model_variant(variant);
    mc.mode = parse_mode(mode);
    mc.vocab_size = vocab_size;
    mc.dim = dim;
    mc.max_sentences = data.max_sentences;
    mc.max_words = data.max_words;
    mc.seed = train.seed;
    return mc;
  }

  void finalize() {
    data.mode = parse_mode(mode);
    if (data.mode == CorpusMode::factored && train.max_decode_len == 100)
      train.max_decode_len = 300;
  }

  // Applies one "key=value" setting; unknown keys are rejected.
  void set(const std::string& key, const std::string& value) {
    if (key == "variant") variant = value;
    else if (key == "mode") mode = value;
    else if (key == "vocab_size") vocab_size = std::stoi(value);
    else if (key == "dim") dim = std::stoi(value);
    else if (key == "lr_mle") train.lr_mle = std::stod(value);
    else if (key == "lr_rl") train.lr_rl = std::stod(value);
    else if (key == "alpha") train.alpha = std::stod(value);
    else if (key == "mle_mix") train.mle_mix = std::stod(value);
    else if (key == "batch_size") train.batch_size = std::stoi(value);
    else if (key == "epochs") train.epochs = std::stoi(value);
    else if (key == "max_decode_len") train.max_decode_len = std::stoi(value);
    else if (key == "grad_clip_norm") train.grad_clip_norm = std::stod(value);
    else if (key == "seed") train.seed = std::stoull(value);
    else if (key == "reward") train.reward = parse_reward(value);
    else if (key == "max_article_tokens") data.max_article_tokens = std::stoi(value);
    else if (key == "max_summary_tokens") data.max_summary_tokens = std::stoi(value);
    else if (key == "max_article_factored") data.max_article_factored = std::stoi(value);
    else if (key == "max_summary_factored") data.max_summary_factored = std::stoi(value);
    else if (key == "max_sentences") data.max_sentences = std::stoi(value);
    else if (key == "max_words") data.max_words = std::stoi(value);
    else throw std::invalid_argument("config: unknown key \"" + key + "\"");
  }

  // Flat key=value text, one setting per line, '#' comments allowed.
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot read " + path);
    std::string line;
    while (std::getline(in, line)) {
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config: malformed line \"" + t + "\"");
      set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
  }
};

}  // namespace nsesum
