#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "nsesum/layers.hpp"

namespace nsesum {

// ---- tokens -----------------------------------------------------------------

inline std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

// One "surface|lemma|pos" unit of a factored corpus. Fields may be empty
// (elided lemma in noisy data); serialization then emits "s | | p" so the
// whitespace-split token stream round-trips.
struct FactoredToken {
  std::string surface;
  std::string lemma;
  std::string pos;

  std::string serialize() const {
    auto part = [](const std::string& f) {
      return f.empty() ? std::string() : " " + f;
    };
    return surface + " |" + part(lemma) + " |" + part(pos);
  }
};

// Splits on the two rightmost bars so a field that is itself "|" survives
// inside the surface (e.g. "12am | 12am | . | ." keeps "12am | 12am").
inline FactoredToken parse_factored_token(const std::string& raw) {
  const std::string s = trim(raw);
  const size_t last = s.rfind('|');
  const size_t mid = (last == std::string::npos || last == 0)
                         ? std::string::npos
                         : s.rfind('|', last - 1);
  if (last == std::string::npos || mid == std::string::npos)
    throw std::invalid_argument("parse_factored_token: need 3 fields in \"" +
                                raw + "\"");
  FactoredToken t;
  t.surface = trim(s.substr(0, mid));
  t.lemma = trim(s.substr(mid + 1, last - mid - 1));
  t.pos = trim(s.substr(last + 1));
  if (t.surface.empty())
    throw std::invalid_argument("parse_factored_token: empty surface in \"" +
                                raw + "\"");
  return t;
}

// One item of a factored stream: either a bar-joined triple or a bare token
// (factored summaries separate sentences with an unfactored ".").
struct FactoredItem {
  bool is_triple = false;
  FactoredToken triple;
  std::string bare;

  std::string serialize() const { return is_triple ? triple.serialize() : bare; }
  int stream_tokens() const { return is_triple ? 3 : 1; }
  const std::string& head() const { return is_triple ? triple.surface : bare; }
};

// Groups a whitespace-split factored stream back into items. Standalone "|"
// separators chain neighbouring tokens into one maximal run parsed with the
// rightmost-bars rule; two consecutive separators mark an empty field.
// Tokens with no separator on either side are bare items, not errors.
inline std::vector<FactoredItem> group_factored_stream(
    const std::vector<std::string>& stream, size_t* skipped = nullptr) {
  std::vector<FactoredItem> out;
  size_t i = 0, skips = 0;
  while (i < stream.size()) {
    if (stream[i] == "|") {  // stray leading separator
      ++skips;
      ++i;
      continue;
    }
    std::string run = stream[i++];
    bool connected = false;
    while (i < stream.size() && stream[i] == "|") {
      connected = true;
      if (i + 1 < stream.size() && stream[i + 1] != "|") {
        run += " | " + stream[i + 1];
        i += 2;
      } else {  // "| |" or trailing "|": empty field
        run += " |";
        i += 1;
      }
    }
    FactoredItem item;
    if (!connected) {
      item.bare = run;
      out.push_back(std::move(item));
      continue;
    }
    try {
      item.is_triple = true;
      item.triple = parse_factored_token(run);
      out.push_back(std::move(item));
    } catch (const std::invalid_argument&) {
      ++skips;
    }
  }
  if (skipped) *skipped = skips;
  return out;
}

inline void append_item_tokens(const FactoredItem& item,
                               std::vector<std::string>& out) {
  if (item.is_triple) {
    out.push_back(item.triple.surface);
    out.push_back(item.triple.lemma);
    out.push_back(item.triple.pos);
  } else {
    out.push_back(item.bare);
  }
}

// ---- vocabulary -------------------------------------------------------------

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kStart = 2;
  static constexpr int kStop = 3;

  Vocabulary() { add_reserved(); }

  // Top (max_size - 4) tokens by frequency, ties broken lexicographically.
  static Vocabulary build(const std::map<std::string, long long>& counts,
                          int max_size) {
    if (max_size <= 4)
      throw std::invalid_argument("build_vocab: size must exceed 4");
    std::vector<std::pair<std::string, long long>> sorted(counts.begin(),
                                                          counts.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocabulary v;
    for (const auto& [tok, cnt] : sorted) {
      if (v.size() >= max_size) break;
      v.add(tok);
    }
    if (v.size() < max_size)
      std::cerr << "build_vocab: corpus yields only " << v.size()
                << " tokens (requested " << max_size << ")\n";
    return v;
  }

  int size() const { return static_cast<int>(id_to_token_.size()); }

  int id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& token) const {
    return token_to_id_.count(token) > 0;
  }
  const std::string& token(int id) const {
    if (id < 0 || id >= size())
      throw std::invalid_argument("vocabulary: id " + std::to_string(id) +
                                  " out of range");
    return id_to_token_[id];
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("vocabulary: cannot write " + path);
    for (const auto& t : id_to_token_) out << t << "\n";
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("vocabulary: cannot read " + path);
    Vocabulary v;
    v.token_to_id_.clear();
    v.id_to_token_.clear();
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      v.add(line);
    }
    if (v.size() < 4 || v.id_to_token_[kPad] != "<pad>")
      throw std::runtime_error("vocabulary: malformed dump " + path);
    return v;
  }

 private:
  void add_reserved() {
    add("<pad>");
    add("<unk>");
    add("<s>");
    add("</s>");
  }
  void add(const std::string& token) {
    if (token_to_id_.count(token)) return;
    token_to_id_[token] = size();
    id_to_token_.push_back(token);
  }

  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Per-document OOV surface -> extended id (V, V+1, ...) in first-occurrence
// order.
struct ExtendedVocabMap {
  int base_size = 0;
  std::vector<std::string> oov_tokens;
  std::unordered_map<std::string, int> oov_ids;

  int size() const { return static_cast<int>(oov_tokens.size()); }
  int extended_size() const { return base_size + size(); }

  int add(const std::string& token) {
    auto it = oov_ids.find(token);
    if (it != oov_ids.end()) return it->second;
    const int id = extended_size();
    oov_ids[token] = id;
    oov_tokens.push_back(token);
    return id;
  }

  // -1 when the token is in neither the base vocabulary nor this map.
  int lookup(const std::string& token) const {
    auto it = oov_ids.find(token);
    return it == oov_ids.end() ? -1 : it->second;
  }

  const std::string& token(int extended_id) const {
    const int i = extended_id - base_size;
    if (i < 0 || i >= size())
      throw std::invalid_argument("extended map: id " +
                                  std::to_string(extended_id) + " unknown");
    return oov_tokens[i];
  }
};

inline std::pair<std::vector<int>, ExtendedVocabMap> map_extended(
    const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  ExtendedVocabMap map;
  map.base_size = vocab.size();
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens)
    ids.push_back(vocab.contains(t) ? vocab.id(t) : map.add(t));
  return {std::move(ids), std::move(map)};
}

// ---- shaping ----------------------------------------------------------------

enum class CorpusMode { plain, factored };

inline CorpusMode parse_mode(const std::string& s) {
  if (s == "plain") return CorpusMode::plain;
  if (s == "factored") return CorpusMode::factored;
  throw std::invalid_argument("unknown corpus mode: " + s);
}

struct DataConfig {
  CorpusMode mode = CorpusMode::plain;
  int max_article_tokens = 400;   // flat cap (plain)
  int max_summary_tokens = 100;   // flat cap (plain)
  int max_article_factored = 800; // serialized stream caps
  int max_summary_factored = 300;
  int max_sentences = 20;  // hier
  int max_words = 20;      // hier, per sentence (x3 in factored mode)

  int article_cap() const {
    return mode == CorpusMode::factored ? max_article_factored
                                        : max_article_tokens;
  }
  int summary_cap() const {
    return mode == CorpusMode::factored ? max_summary_factored
                                        : max_summary_tokens;
  }
  int words_per_sentence() const {
    return mode == CorpusMode::factored ? 3 * max_words : max_words;
  }
};

// Lowercased flat token stream. Factored text is parsed into items and
// re-serialized as consecutive stream tokens (three per triple); the cap is
// applied item-wise so a triple is never split.
inline std::vector<std::string> tokenize_flat(const std::string& text,
                                              CorpusMode mode, int cap,
                                              size_t* skipped = nullptr) {
  std::vector<std::string> raw = split_ws(lowercase(text));
  std::vector<std::string> toks;
  if (mode == CorpusMode::plain) {
    toks = std::move(raw);
    if (static_cast<int>(toks.size()) > cap) toks.resize(cap);
  } else {
    for (const auto& item : group_factored_stream(raw, skipped)) {
      if (static_cast<int>(toks.size()) + item.stream_tokens() > cap) break;
      append_item_tokens(item, toks);
    }
  }
  if (toks.empty()) throw std::invalid_argument("tokenize: empty text");
  return toks;
}

inline bool sentence_terminal(const std::string& tok) {
  return tok == "." || tok == "!" || tok == "?";
}

// Sentence-shaped grid: up to `max_sentences` rows of up to `words` tokens,
// split on terminal punctuation. Factored streams break on the 3-token unit
// whose surface is terminal.
inline std::vector<std::vector<std::string>> tokenize_hier(
    const std::string& text, const DataConfig& cfg, size_t* skipped = nullptr) {
  std::vector<std::string> raw = split_ws(lowercase(text));
  std::vector<FactoredItem> items;
  if (cfg.mode == CorpusMode::plain) {
    for (auto& t : raw) {
      FactoredItem item;
      item.bare = std::move(t);
      items.push_back(std::move(item));
    }
  } else {
    items = group_factored_stream(raw, skipped);
  }
  if (items.empty()) throw std::invalid_argument("tokenize: empty text");
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::string> cur;
  const int wcap = cfg.words_per_sentence();
  for (const auto& item : items) {
    if (static_cast<int>(cur.size()) + item.stream_tokens() <= wcap)
      append_item_tokens(item, cur);
    if (sentence_terminal(item.head())) {
      sentences.push_back(std::move(cur));
      cur.clear();
      if (static_cast<int>(sentences.size()) >= cfg.max_sentences) break;
    }
  }
  if (!cur.empty() && static_cast<int>(sentences.size()) < cfg.max_sentences)
    sentences.push_back(std::move(cur));
  if (sentences.empty()) throw std::invalid_argument("tokenize: no sentences");
  return sentences;
}

// ---- examples ---------------------------------------------------------------

// One shaped training/evaluation example. Hier examples carry a flattened
// sentences x words grid; flat examples use the grid with one row.
struct Example {
  bool hier = false;
  int sentences = 0;        // live sentence count (hier)
  int words_per_sent = 0;   // grid width (hier)

  std::vector<std::string> src_tokens;   // surfaces, PAD slots hold "<pad>"
  std::vector<int> src_input_ids;        // base ids, OOV -> UNK (embedding input)
  std::vector<int> src_extended_ids;     // copy targets, -1 on PAD slots
  std::vector<uint8_t> src_mask;         // false on PAD slots
  std::vector<uint8_t> sent_mask;        // hier only

  std::vector<std::string> tgt_tokens;
  std::vector<int> tgt_ids;              // extended ids, STOP-terminated

  ExtendedVocabMap oov;
};

inline void fill_source(Example& ex, const std::vector<std::string>& tokens,
                        const Vocabulary& vocab) {
  auto [ext_ids, oov] = map_extended(tokens, vocab);
  ex.oov = std::move(oov);
  for (size_t i = 0; i < tokens.size(); ++i) {
    ex.src_tokens.push_back(tokens[i]);
    ex.src_input_ids.push_back(vocab.id(tokens[i]));
    ex.src_extended_ids.push_back(ext_ids[i]);
    ex.src_mask.push_back(1);
  }
}

inline void fill_target(Example& ex, const std::vector<std::string>& tokens,
                        const Vocabulary& vocab) {
  for (const auto& t : tokens) {
    ex.tgt_tokens.push_back(t);
    if (vocab.contains(t)) {
      ex.tgt_ids.push_back(vocab.id(t));
    } else {
      // copyable only if present in the article; otherwise trained as UNK
      const int ext = ex.oov.lookup(t);
      ex.tgt_ids.push_back(ext >= 0 ? ext : Vocabulary::kUnk);
    }
  }
  ex.tgt_ids.push_back(Vocabulary::kStop);
}

inline Example shape_example(const std::string& article,
                             const std::string& summary, bool hier,
                             const Vocabulary& vocab, const DataConfig& cfg) {
  Example ex;
  ex.hier = hier;
  if (!hier) {
    fill_source(ex, tokenize_flat(article, cfg.mode, cfg.article_cap()), vocab);
  } else {
    const auto grid = tokenize_hier(article, cfg);
    ex.sentences = static_cast<int>(grid.size());
    ex.words_per_sent = cfg.words_per_sentence();
    std::vector<std::string> flat;
    for (const auto& sent : grid) {
      for (const auto& t : sent) flat.push_back(t);
      for (int j = static_cast<int>(sent.size()); j < ex.words_per_sent; ++j)
        flat.push_back("<pad>");
    }
    // short documents are padded with fully masked sentences
    for (int i = ex.sentences; i < cfg.max_sentences; ++i)
      for (int j = 0; j < ex.words_per_sent; ++j) flat.push_back("<pad>");
    auto [ext_ids, oov] = map_extended(flat, vocab);
    ex.oov = std::move(oov);
    for (size_t i = 0; i < flat.size(); ++i) {
      const bool pad = flat[i] == "<pad>";
      ex.src_tokens.push_back(flat[i]);
      ex.src_input_ids.push_back(pad ? Vocabulary::kPad : vocab.id(flat[i]));
      ex.src_extended_ids.push_back(pad ? -1 : ext_ids[i]);
      ex.src_mask.push_back(pad ? 0 : 1);
    }
    ex.sent_mask.assign(static_cast<size_t>(cfg.max_sentences), 0);
    for (int i = 0; i < ex.sentences; ++i) ex.sent_mask[i] = 1;
  }
  if (!summary.empty())
    fill_target(ex, tokenize_flat(summary, cfg.mode, cfg.summary_cap()), vocab);
  return ex;
}

// ---- corpus I/O -------------------------------------------------------------

// Corpus format: UTF-8, one example per line, "article<TAB>summary".
struct CorpusDoc {
  std::string article;
  std::string summary;
};

inline std::vector<CorpusDoc> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("corpus: cannot read " + path);
  std::vector<CorpusDoc> docs;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const size_t tab = line.find('\t');
    CorpusDoc doc;
    if (tab == std::string::npos) {
      doc.article = line;
    } else {
      doc.article = line.substr(0, tab);
      doc.summary = line.substr(tab + 1);
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

inline Vocabulary build_vocab_from_corpus(const std::vector<CorpusDoc>& docs,
                                          CorpusMode mode, int max_size) {
  std::map<std::string, long long> counts;
  auto count_text = [&](const std::string& text) {
    if (trim(text).empty()) return;
    std::vector<std::string> raw = split_ws(lowercase(text));
    if (mode == CorpusMode::plain) {
      for (const auto& t : raw) ++counts[t];
    } else {
      // factored vocabularies span surface, lemma and PoS streams
      for (const auto& item : group_factored_stream(raw)) {
        std::vector<std::string> toks;
        append_item_tokens(item, toks);
        for (const auto& t : toks)
          if (!t.empty()) ++counts[t];
      }
    }
  };
  for (const auto& d : docs) {
    count_text(d.article);
    count_text(d.summary);
  }
  return Vocabulary::build(counts, max_size);
}

// ---- embeddings -------------------------------------------------------------

struct EmbeddingLoadStats {
  size_t loaded = 0;
  size_t malformed = 0;
};

// GloVe text format: "token v1 ... v_dim" per line. Vocab tokens absent
// from the file get uniform(-0.1, 0.1) rows from the run seed; PAD is zero.
inline EmbeddingTable load_embeddings(const std::string& path,
                                      const Vocabulary& vocab, int dim,
                                      uint64_t seed,
                                      EmbeddingLoadStats* stats = nullptr) {
  Rng rng(seed);
  EmbeddingTable table(vocab.size(), dim, rng);
  EmbeddingLoadStats st;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("embeddings: cannot read " + path);
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string tok;
      if (!(ls >> tok)) continue;
      std::vector<double> vals;
      double v;
      while (ls >> v) vals.push_back(v);
      if (!ls.eof() && ls.fail()) {
        ++st.malformed;
        continue;
      }
      if (vals.empty()) {
        ++st.malformed;
        continue;
      }
      if (static_cast<int>(vals.size()) != dim)
        throw std::runtime_error("embeddings: line for \"" + tok + "\" has " +
                                 std::to_string(vals.size()) +
                                 " values, expected " + std::to_string(dim));
      if (!vocab.contains(tok)) continue;
      const int id = vocab.id(tok);
      std::copy(vals.begin(), vals.end(),
                table.table().value().begin() +
                    static_cast<size_t>(id) * dim);
      ++st.loaded;
    }
    if (st.malformed > 0)
      std::cerr << "embeddings: skipped " << st.malformed
                << " malformed lines\n";
  }
  // PAD row stays zero regardless of file contents
  for (int j = 0; j < dim; ++j) table.table().value()[j] = 0.0;
  if (stats) *stats = st;
  return table;
}

}  // namespace nsesum
