#include "cohere/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace cohere {

SyntheticCorpus make_synthetic_corpus(const SyntheticCorpusOptions& options) {
  if (options.sentences_per_document < 1 || options.filler_vocabulary < 1 || options.vector_dim < 1 ||
      options.min_fillers > options.max_fillers) {
    throw std::invalid_argument("invalid synthetic corpus options");
  }
  std::mt19937_64 rng(options.seed);
  SyntheticCorpus corpus;
  corpus.vectors = VectorStore(options.vector_dim);

  std::normal_distribution<float> normal(0.0f, 1.0f / std::sqrt(static_cast<float>(options.vector_dim)));
  std::vector<float> v(options.vector_dim);
  auto add_token = [&](const std::string& token) {
    for (auto& x : v) x = normal(rng);
    corpus.vectors.add(token, v);
    corpus.tokens.push_back(token);
  };
  std::vector<std::string> markers;
  for (std::size_t i = 0; i < options.sentences_per_document; ++i) {
    markers.push_back("pos" + std::to_string(i));
    add_token(markers.back());
  }
  std::vector<std::string> fillers;
  for (std::size_t i = 0; i < options.filler_vocabulary; ++i) {
    fillers.push_back("w" + std::to_string(i));
    add_token(fillers.back());
  }
  add_token(".");

  const auto last = static_cast<long>(options.sentences_per_document) - 1;
  std::uniform_int_distribution<std::size_t> filler_count(options.min_fillers, options.max_fillers);
  std::uniform_int_distribution<std::size_t> filler_pick(0, fillers.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  corpus.documents.reserve(options.documents);
  for (std::size_t d = 0; d < options.documents; ++d) {
    std::vector<std::string> texts;
    for (std::size_t i = 0; i < options.sentences_per_document; ++i) {
      long marker = static_cast<long>(i);
      const double u = unit(rng);
      if (u < options.marker_noise / 2) {
        marker -= 1;
      } else if (u < options.marker_noise) {
        marker += 1;
      }
      marker = std::clamp(marker, 0L, last);
      std::vector<std::string> words;
      const auto n_fillers = filler_count(rng);
      for (std::size_t k = 0; k < n_fillers; ++k) words.push_back(fillers[filler_pick(rng)]);
      std::uniform_int_distribution<std::size_t> slot(0, words.size());
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(slot(rng)), markers[static_cast<std::size_t>(marker)]);
      std::string text;
      for (const auto& w : words) text += w + " ";
      text += ".";
      texts.push_back(std::move(text));
    }
    corpus.documents.push_back(Document::from_sentences("synth-" + std::to_string(d), texts));
  }
  return corpus;
}

}  // namespace cohere
