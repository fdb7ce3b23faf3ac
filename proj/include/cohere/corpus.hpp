#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cohere {

struct Sentence {
  std::size_t index = 0;
  std::string text;
  std::vector<std::string> tokens;
};

/// A segmented, tokenized text. Sentence indices are 0..N-1 and match
/// their position in `sentences`.
struct Document {
  std::string id;
  std::vector<Sentence> sentences;
  std::map<std::string, std::string> meta;

  std::size_t size() const { return sentences.size(); }
  bool empty() const { return sentences.empty(); }

  /// Builds a document from already-segmented sentence strings. Sentences
  /// that tokenize to nothing are dropped and the rest re-indexed.
  static Document from_sentences(std::string id, const std::vector<std::string>& texts,
                                 std::map<std::string, std::string> meta = {});

  /// Copy of this document with sentences rearranged so that new position k
  /// holds old sentence order[k]. Indices are reassigned to match.
  Document permuted(std::span<const std::size_t> order) const;
};

struct SegmenterOptions {
  /// Tokens ending in '.' that never terminate a sentence. Compared
  /// case-sensitively against the whitespace chunk preceding the break.
  std::vector<std::string> abbreviations = {
      "Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "St.", "Jr.", "Sr.", "vs.", "etc.",
      "e.g.", "i.e.", "U.S.", "U.K.", "Inc.", "Co.", "Corp.", "Ltd.", "No.", "Fig."};
};

/// Splits raw text at '.', '!' or '?' followed by whitespace and an uppercase
/// letter. Throws EmptyDocument when no sentence survives.
std::vector<Sentence> segment_sentences(std::string_view raw_text,
                                        const SegmenterOptions& options = {});

/// Lowercases, splits on whitespace and detaches leading/trailing
/// punctuation as separate tokens. A trailing '.' stays attached when the
/// chunk already contains an inner '.', so "U.S." survives as "u.s.".
std::vector<std::string> tokenize(std::string_view sentence_text);

/// Frequency-ranked vocabulary; rank 0 is the most frequent token.
class Vocab {
 public:
  Vocab() = default;
  Vocab(std::vector<std::string> tokens_by_rank, std::size_t max_size);

  bool contains(std::string_view token) const;
  std::optional<std::size_t> rank(std::string_view token) const;
  std::size_t size() const { return tokens_.size(); }
  std::size_t max_size() const { return max_size_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// FNV-1a over the rank-ordered tokens; identifies a vocabulary in model files.
  std::uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ranks_;
  std::size_t max_size_ = 0;
};

/// Top `max_size` tokens by frequency, ties broken lexicographically.
Vocab build_vocab(std::span<const Document> train_docs, std::size_t max_size);

/// floor(index * q / n), clamped to q - 1.
int quantile_label(std::size_t sentence_index, std::size_t n_sentences, int q);

struct PermutationSet {
  std::string document_id;
  std::vector<std::vector<std::size_t>> permutations;
  std::uint64_t seed = 0;
};

/// k uniformly drawn non-identity permutations of 0..N-1. Draws are distinct
/// whenever N! - 1 >= k.
PermutationSet generate_permutations(const Document& doc, std::size_t k, std::uint64_t seed);
std::vector<std::vector<std::size_t>> generate_permutations(std::size_t n, std::size_t k,
                                                            std::uint64_t seed);

bool is_permutation_of_range(std::span<const std::size_t> perm);
std::vector<std::size_t> invert_permutation(std::span<const std::size_t> perm);

struct CorpusSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

/// Shuffled split by fraction; the test split takes the remainder.
CorpusSplit split_corpus(std::span<const Document> docs, double validation_fraction,
                         double test_fraction, std::uint64_t seed);

/// Split on a metadata field, e.g. key "year" with validation {"2014"} and
/// test {"2015"}; everything else is training data.
CorpusSplit split_by_meta(std::span<const Document> docs, const std::string& key,
                          const std::vector<std::string>& validation_values,
                          const std::vector<std::string>& test_values);

std::vector<Document> select_documents(std::span<const Document> docs,
                                       std::span<const std::string> ids);

enum class CorpusFormat { jsonl, one_sentence_per_line, raw_text_dir };

CorpusFormat parse_corpus_format(std::string_view name);

struct SkippedRecord {
  std::size_t line = 0;  // 1-based; 0 for whole-file records
  std::string source;
  std::string reason;
};

struct CorpusLoadResult {
  std::vector<Document> documents;
  std::vector<SkippedRecord> skipped;
};

/// Reads a corpus. Malformed records raise FormatError naming the line;
/// records with no usable sentences are skipped and listed in the result.
CorpusLoadResult load_corpus(const std::string& path, CorpusFormat format,
                             const SegmenterOptions& segmenter = {});

void save_jsonl(std::span<const Document> docs, const std::string& path);

}  // namespace cohere
