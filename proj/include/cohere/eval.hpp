#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cohere/coherence.hpp"
#include "cohere/corpus.hpp"

namespace cohere {

struct ReorderMetrics {
  double position_accuracy = 0;
  double mean_tau = 0;
};

/// `predicted[k]` is the true index of the sentence placed at position k.
ReorderMetrics reorder_metrics(std::span<const std::size_t> predicted);

/// `doc` is in its true order and `predicted` orders its sentences.
ReorderMetrics reorder_metrics(const Ordering& predicted, const Document& doc);

/// Sentence-level accuracy pooled over documents; tau averaged per document.
class ReorderAccumulator {
 public:
  void add(std::span<const std::size_t> predicted);
  ReorderMetrics result() const;
  std::size_t documents() const { return docs_; }

 private:
  std::size_t docs_ = 0;
  std::size_t sentences_ = 0;
  std::size_t correct_ = 0;
  double tau_sum_ = 0;
};

struct DiscriminationMetrics {
  double accuracy = 0;
  std::size_t trials = 0;
  std::size_t correct = 0;
  std::size_t documents = 0;
  /// Documents with fewer than 2 sentences.
  std::vector<std::string> excluded;
  std::vector<double> fold_accuracies;
};

/// Returns true when the trial was judged correctly.
using TrialJudge = std::function<bool(const Document& doc, std::span<const std::size_t> permutation)>;

/// k permutations per document, drawn from a per-document seed derived from
/// `seed` and the document's position in `docs`.
DiscriminationMetrics run_discrimination(std::span<const Document> docs, std::size_t k, std::uint64_t seed,
                                         const TrialJudge& judge);

/// Predicts each document once and permutes the PPD rows for each trial,
/// which relies on PPDs being independent of sentence order.
DiscriminationMetrics discrimination_accuracy(const PpdSource& source, std::span<const Document> docs, std::size_t k,
                                              std::uint64_t seed);

struct RougeScore {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n);
RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);

/// Length of the longest common subsequence (bit-parallel, O(m n / 64)).
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

enum class BenchmarkTask { discrimination, reordering, summarization };

BenchmarkTask parse_benchmark_task(std::string_view name);

struct BenchmarkParams {
  std::string model_name = "PPDs";
  std::size_t permutations = 20;
  std::uint64_t seed = 0;
  /// Discrimination only: split the corpus into this many folds and report
  /// per-fold accuracy (0 or 1 disables).
  std::size_t cv_folds = 0;
  std::size_t summary_sentences = 3;
  /// Metadata key holding the reference summary.
  std::string reference_key = "reference";
};

inline constexpr int kReportSchemaVersion = 1;

struct BenchmarkReport {
  nlohmann::json json;
  /// Fixed columns: (model, acc, tau) or (model, R1, R2, RL).
  std::string table;
};

BenchmarkReport run_benchmark(BenchmarkTask task, const PpdSource& source, std::span<const Document> corpus,
                              const BenchmarkParams& params);

/// Builds a PPD source from training documents.
using FoldTrainer = std::function<std::unique_ptr<PpdSource>(std::span<const Document> train)>;

/// k-fold cross-validated discrimination: trains on k-1 folds, tests on the
/// held-out one.
BenchmarkReport cross_validate_discrimination(std::span<const Document> corpus, const FoldTrainer& trainer,
                                              const BenchmarkParams& params);

}  // namespace cohere
