#pragma once

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "cohere/corpus.hpp"
#include "cohere/embeddings.hpp"
#include "cohere/position_model.hpp"

namespace cohere::testing {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cohere-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline ModelConfig small_config(int q = 3, int input_dim = 15, int l_max = 5, std::uint64_t seed = 1) {
  ModelConfig cfg;
  cfg.q = q;
  cfg.layer_widths = {8, 8};
  cfg.layer_dropouts = {0.0, 0.0};
  cfg.input_dim = input_dim;
  cfg.l_max = l_max;
  cfg.seed = seed;
  return cfg;
}

/// Random encoded sentence with `length` real rows.
inline EncodedSentence random_input(const ModelConfig& cfg, std::size_t length, std::mt19937_64& rng) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  EncodedSentence xs;
  xs.features = FeatureMatrix::Zero(cfg.l_max, cfg.input_dim);
  xs.mask.assign(static_cast<std::size_t>(cfg.l_max), 0);
  for (std::size_t t = 0; t < length; ++t) {
    for (int c = 0; c < cfg.input_dim; ++c) xs.features(static_cast<Eigen::Index>(t), c) = normal(rng);
    xs.mask[t] = 1;
  }
  return xs;
}

/// Store of dimension `dim` with a random vector for each token.
inline VectorStore random_store(const std::vector<std::string>& tokens, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  VectorStore store(dim);
  std::vector<float> v(dim);
  for (const auto& t : tokens) {
    for (auto& x : v) x = normal(rng);
    store.add(t, v);
  }
  return store;
}

/// Documents of random words "t0".."t<vocab-1>".
inline std::vector<Document> random_documents(std::size_t n_docs, std::size_t min_sentences,
                                              std::size_t max_sentences, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> n_sent(min_sentences, max_sentences);
  std::uniform_int_distribution<std::size_t> n_words(1, 9);
  std::uniform_int_distribution<std::size_t> word(0, vocab - 1);
  std::vector<Document> docs;
  for (std::size_t d = 0; d < n_docs; ++d) {
    std::vector<std::string> texts;
    const auto n = n_sent(rng);
    for (std::size_t s = 0; s < n; ++s) {
      std::string text;
      const auto w = n_words(rng);
      for (std::size_t k = 0; k < w; ++k) text += "t" + std::to_string(word(rng)) + " ";
      texts.push_back(text + ".");
    }
    docs.push_back(Document::from_sentences("doc" + std::to_string(d), texts));
  }
  return docs;
}

inline std::vector<std::string> numbered_tokens(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("t" + std::to_string(i));
  out.push_back(".");
  return out;
}

}  // namespace cohere::testing
