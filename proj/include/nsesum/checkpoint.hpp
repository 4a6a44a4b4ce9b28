#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "nsesum/model.hpp"

namespace nsesum {

// Single-file checkpoint: text header (format tag + model config), then
// named tensors as raw 64-bit floats, then optional Adam state. The file
// is byte-deterministic for a given parameter set.
namespace ckpt {

constexpr const char* kMagic = "NSESUM-CKPT v1";

inline void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_doubles(std::ostream& out, const std::vector<double>& v) {
  write_u64(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}
inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline std::vector<double> read_doubles(std::istream& in) {
  std::vector<double> v(read_u64(in));
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
  return v;
}
inline std::string read_string(std::istream& in) {
  std::string s(read_u32(in), '\0');
  in.read(s.data(), static_cast<std::streamsize>(s.size()));
  return s;
}

}  // namespace ckpt

struct AdamSlot {
  std::vector<double> m;
  std::vector<double> v;
};

struct AdamState {
  uint64_t step = 0;
  uint64_t skipped = 0;
  std::vector<AdamSlot> slots;
};

inline void save_checkpoint(const std::string& path, Model& model,
                            const AdamState* adam = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  const ModelConfig& cfg = model.config();
  out << ckpt::kMagic << "\n"
      << "variant " << variant_name(cfg.variant) << "\n"
      << "mode " << (cfg.mode == CorpusMode::factored ? "factored" : "plain")
      << "\n"
      << "vocab_size " << cfg.vocab_size << "\n"
      << "dim " << cfg.dim << "\n"
      << "max_sentences " << cfg.max_sentences << "\n"
      << "max_words " << cfg.max_words << "\n"
      << "seed " << cfg.seed << "\n"
      << "end-header\n";
  auto params = model.params();
  ckpt::write_u32(out, static_cast<uint32_t>(params.size()));
  for (auto& p : params) {
    ckpt::write_string(out, p.name);
    ckpt::write_u32(out, static_cast<uint32_t>(p.tensor.rank()));
    ckpt::write_u32(out, static_cast<uint32_t>(p.tensor.rows()));
    ckpt::write_u32(out, static_cast<uint32_t>(p.tensor.cols()));
    ckpt::write_doubles(out, p.tensor.value());
  }
  out.put(adam ? 1 : 0);
  if (adam) {
    ckpt::write_u64(out, adam->step);
    ckpt::write_u64(out, adam->skipped);
    ckpt::write_u32(out, static_cast<uint32_t>(adam->slots.size()));
    for (const auto& s : adam->slots) {
      ckpt::write_doubles(out, s.m);
      ckpt::write_doubles(out, s.v);
    }
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

struct LoadedCheckpoint {
  Model model;
  bool has_adam = false;
  AdamState adam;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != ckpt::kMagic)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::map<std::string, std::string> header;
  while (std::getline(in, line) && line != "end-header") {
    const size_t sp = line.find(' ');
    if (sp == std::string::npos)
      throw std::runtime_error("checkpoint: malformed header line \"" + line +
                               "\"");
    header[line.substr(0, sp)] = line.substr(sp + 1);
  }
  ModelConfig cfg;
  cfg.variant = parse_model_variant(header.at("variant"));
  cfg.mode = parse_mode(header.at("mode"));
  cfg.vocab_size = std::stoi(header.at("vocab_size"));
  cfg.dim = std::stoi(header.at("dim"));
  cfg.max_sentences = std::stoi(header.at("max_sentences"));
  cfg.max_words = std::stoi(header.at("max_words"));
  cfg.seed = std::stoull(header.at("seed"));

  LoadedCheckpoint result;
  result.model = Model(cfg);
  auto params = result.model.params();
  const uint32_t count = ckpt::read_u32(in);
  if (count != params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (auto& p : params) {
    const std::string name = ckpt::read_string(in);
    if (name != p.name)
      throw std::runtime_error("checkpoint: expected tensor " + p.name +
                               ", found " + name);
    const uint32_t rank = ckpt::read_u32(in);
    const uint32_t rows = ckpt::read_u32(in);
    const uint32_t cols = ckpt::read_u32(in);
    if (rank != static_cast<uint32_t>(p.tensor.rank()) ||
        rows != static_cast<uint32_t>(p.tensor.rows()) ||
        cols != static_cast<uint32_t>(p.tensor.cols()))
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
    std::vector<double> vals = ckpt::read_doubles(in);
    if (vals.size() != p.tensor.value().size())
      throw std::runtime_error("checkpoint: value size mismatch for " + p.name);
    p.tensor.value() = std::move(vals);
  }
  const int flag = in.get();
  if (flag == 1) {
    result.has_adam = true;
    result.adam.step = ckpt::read_u64(in);
    result.adam.skipped = ckpt::read_u64(in);
    const uint32_t n = ckpt::read_u32(in);
    result.adam.slots.resize(n);
    for (auto& s : result.adam.slots) {
      s.m = ckpt::read_doubles(in);
      s.v = ckpt::read_doubles(in);
    }
  }
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
  return result;
}

}  // namespace nsesum
