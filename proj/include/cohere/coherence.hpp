#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cohere/corpus.hpp"
#include "cohere/embeddings.hpp"
#include "cohere/position_model.hpp"
#include "cohere/ppd.hpp"

namespace cohere {

/// One PPD per sentence, in the document's current order.
struct PpdSequence {
  std::string document_id;
  std::vector<Ppd> rows;
  /// Sentences that had no tokens and received a uniform PPD.
  std::vector<std::uint8_t> degenerate;

  std::size_t size() const { return rows.size(); }
  std::size_t q() const { return rows.empty() ? 0 : rows.front().q(); }

  /// Rows rearranged so new position k holds old row order[k].
  PpdSequence permuted(std::span<const std::size_t> order) const;
};

/// Produces a PPD sequence for a document.
class PpdSource {
 public:
  virtual ~PpdSource() = default;
  virtual PpdSequence predict(const Document& doc) const = 0;
};

/// Runs every sentence through a trained model, one forward pass each, with
/// the document average computed once.
PpdSequence ppd_sequence(const PositionModel& model, const Document& doc, const VectorStore& store,
                         const Vocab& vocab);

class ModelPpdSource final : public PpdSource {
 public:
  ModelPpdSource(const PositionModel& model, const VectorStore& store, const Vocab& vocab)
      : model_(model), store_(store), vocab_(vocab) {}
  PpdSequence predict(const Document& doc) const override { return ppd_sequence(model_, doc, store_, vocab_); }

 private:
  const PositionModel& model_;
  const VectorStore& store_;
  const Vocab& vocab_;
};

/// Expected 1-based quantile: sum over i of (i + 1) * probs[i].
double weighted_quantile(const Ppd& ppd);
std::vector<double> weighted_quantiles(const PpdSequence& seq);

struct Ordering {
  /// Current sentence indices in induced order.
  std::vector<std::size_t> permutation;
  /// Indexed by current sentence index.
  std::vector<double> weighted_quantiles;
};

/// Stable ascending sort by weighted quantile.
Ordering reorder(const PpdSequence& seq);

/// Tau-a: (concordant - discordant) / (n(n-1)/2); tied pairs count zero.
/// O(n log n). Throws TooShort for n < 2 and MismatchedInputs on length
/// mismatch.
double kendall_tau(std::span<const double> induced, std::span<const double> reference);

struct CoherenceScore {
  double tau = 0;
  std::size_t n = 0;
  /// Set for one-sentence texts, which score 1.0 by definition.
  bool degenerate = false;
};

CoherenceScore coherence_score(const PpdSequence& seq);

enum class Verdict { original, permuted };

/// Picks the strictly more coherent input; exact ties go to `permuted`.
/// Throws MismatchedInputs unless both hold the same multiset of rows.
Verdict discriminate(const PpdSequence& original, const PpdSequence& permuted);

}  // namespace cohere
