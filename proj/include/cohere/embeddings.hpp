#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "cohere/corpus.hpp"

namespace cohere {

/// Immutable-after-load token -> dense vector table. Tokens are lowercased on
/// insertion so lookups agree with `tokenize`; the first spelling wins.
class VectorStore {
 public:
  VectorStore() = default;
  explicit VectorStore(std::size_t dim) : dim_(dim) {}

  /// Returns false when a (case-folded) duplicate was ignored.
  bool add(std::string_view token, std::span<const float> values);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return index_.size(); }
  bool contains(std::string_view token) const;
  std::optional<std::span<const float>> find(std::string_view token) const;

  /// Restricts the word-level block of token encodings to `vocab`. Document
  /// averages keep using every stored vector.
  void restrict_word_level(const Vocab& vocab);
  const std::optional<Vocab>& word_level_restriction() const { return restriction_; }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<float> data_;
  std::optional<Vocab> restriction_;
};

/// Reads the textual vector format: optional "<count> <dim>" header, then
/// "<token> <f1> ... <f_dim>" per line. Dimension changes mid-file raise
/// FormatError.
VectorStore load_vectors(const std::string& path, const Vocab* restrict_to = nullptr);
void save_vectors(const VectorStore& store, std::span<const std::string> tokens, const std::string& path);

using TokenEncoding = std::vector<float>;

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// l_max x 3d matrix of token encodings, post-padded with zero rows.
struct EncodedSentence {
  FeatureMatrix features;
  std::vector<std::uint8_t> mask;

  std::size_t length() const;
  bool degenerate() const { return length() == 0; }
};

/// Mean of the in-store token vectors of the whole document; zero when no
/// token is in the store. Accumulates per distinct token in sorted order, so
/// the result does not depend on sentence order at all.
std::vector<float> doc_average(const Document& doc, const VectorStore& store);

/// w ++ a ++ (w - a), with w zeroed unless the token is in vocab and store.
TokenEncoding encode_token(std::string_view token, std::span<const float> doc_avg, const VectorStore& store,
                           const Vocab& vocab);

/// Keeps the first l_max tokens.
EncodedSentence encode_sentence(const Sentence& sentence, std::span<const float> doc_avg,
                                const VectorStore& store, const Vocab& vocab, std::size_t l_max);

std::vector<EncodedSentence> encode_document(const Document& doc, const VectorStore& store, const Vocab& vocab,
                                             std::size_t l_max);

}  // namespace cohere
