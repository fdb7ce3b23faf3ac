#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cohere/corpus.hpp"
#include "cohere/embeddings.hpp"

namespace cohere {

/// Documents whose sentences each carry one position marker token among
/// random filler words. A sentence at index i gets marker "pos<i>", or with
/// probability `marker_noise` one of its neighbours "pos<i-1>"/"pos<i+1>".
/// The noise makes neighbouring markers overlap in quantile, which gives
/// each marker a distinct expected quantile.
struct SyntheticCorpusOptions {
  std::size_t documents = 2000;
  std::size_t sentences_per_document = 10;
  std::size_t filler_vocabulary = 200;
  std::size_t min_fillers = 3;
  std::size_t max_fillers = 8;
  double marker_noise = 0.1;
  std::size_t vector_dim = 16;
  std::uint64_t seed = 7;
};

struct SyntheticCorpus {
  std::vector<Document> documents;
  VectorStore vectors;
  /// Every token that has a vector, in insertion order.
  std::vector<std::string> tokens;
};

SyntheticCorpus make_synthetic_corpus(const SyntheticCorpusOptions& options = {});

}  // namespace cohere
