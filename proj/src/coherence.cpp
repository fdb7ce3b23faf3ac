#include "cohere/coherence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cohere/errors.hpp"

namespace cohere {

PpdSequence PpdSequence::permuted(std::span<const std::size_t> order) const {
  if (order.size() != rows.size() || !is_permutation_of_range(order)) {
    throw MismatchedInputs("permutation does not match PPD sequence length");
  }
  PpdSequence out;
  out.document_id = document_id;
  out.rows.reserve(rows.size());
  out.degenerate.reserve(rows.size());
  for (auto i : order) {
    out.rows.push_back(rows[i]);
    out.degenerate.push_back(degenerate.empty() ? 0 : degenerate[i]);
  }
  return out;
}

PpdSequence ppd_sequence(const PositionModel& model, const Document& doc, const VectorStore& store,
                         const Vocab& vocab) {
  if (doc.empty()) throw EmptyDocument("document '" + doc.id + "' has no sentences");
  if (3 * store.dim() != static_cast<std::size_t>(model.config().input_dim)) {
    throw VersionMismatch("vector store dimension does not match the model input");
  }
  const auto encoded = encode_document(doc, store, vocab, static_cast<std::size_t>(model.config().l_max));
  PpdSequence seq;
  seq.document_id = doc.id;
  seq.rows.reserve(encoded.size());
  seq.degenerate.reserve(encoded.size());
  for (const auto& sentence : encoded) {
    if (sentence.degenerate()) {
      seq.rows.push_back(Ppd::uniform(static_cast<std::size_t>(model.config().q)));
      seq.degenerate.push_back(1);
    } else {
      seq.rows.push_back(forward(model, sentence));
      seq.degenerate.push_back(0);
    }
  }
  return seq;
}

double weighted_quantile(const Ppd& ppd) {
  double sum = 0.0;
  for (std::size_t i = 0; i < ppd.probs.size(); ++i) sum += static_cast<double>(i + 1) * ppd.probs[i];
  return sum;
}

std::vector<double> weighted_quantiles(const PpdSequence& seq) {
  std::vector<double> out;
  out.reserve(seq.size());
  for (const auto& row : seq.rows) out.push_back(weighted_quantile(row));
  return out;
}

Ordering reorder(const PpdSequence& seq) {
  Ordering ordering;
  ordering.weighted_quantiles = weighted_quantiles(seq);
  ordering.permutation.resize(seq.size());
  std::iota(ordering.permutation.begin(), ordering.permutation.end(), std::size_t{0});
  const auto& wq = ordering.weighted_quantiles;
  std::stable_sort(ordering.permutation.begin(), ordering.permutation.end(),
                   [&](std::size_t a, std::size_t b) { return wq[a] < wq[b]; });
  return ordering;
}

namespace {

std::int64_t tied_pairs(std::int64_t run) { return run * (run - 1) / 2; }

// Counts pairs i < j with v[i] > v[j] while sorting v ascending.
std::int64_t count_inversions(std::vector<double>& v, std::vector<double>& scratch, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t inv = count_inversions(v, scratch, lo, mid) + count_inversions(v, scratch, mid, hi);
  std::size_t i = lo;
  std::size_t j = mid;
  std::size_t k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += static_cast<std::int64_t>(mid - i);
      scratch[k++] = v[j++];
    } else {
      scratch[k++] = v[i++];
    }
  }
  while (i < mid) scratch[k++] = v[i++];
  while (j < hi) scratch[k++] = v[j++];
  std::copy(scratch.begin() + static_cast<std::ptrdiff_t>(lo), scratch.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

}  // namespace

double kendall_tau(std::span<const double> induced, std::span<const double> reference) {
  if (induced.size() != reference.size()) throw MismatchedInputs("kendall_tau: rankings differ in length");
  const std::size_t n = induced.size();
  if (n < 2) throw TooShort("kendall_tau needs at least 2 items");
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(induced[i]) || std::isnan(reference[i])) throw std::invalid_argument("kendall_tau: NaN rank");
  }
  // Knight's algorithm: sort by (x, y), then count y-inversions with merge sort.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return induced[a] != induced[b] ? induced[a] < induced[b] : reference[a] < reference[b];
  });
  std::int64_t ties_x = 0;
  std::int64_t ties_xy = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && induced[idx[j]] == induced[idx[i]]) ++j;
    ties_x += tied_pairs(static_cast<std::int64_t>(j - i));
    for (std::size_t a = i; a < j;) {
      std::size_t b = a + 1;
      while (b < j && reference[idx[b]] == reference[idx[a]]) ++b;
      ties_xy += tied_pairs(static_cast<std::int64_t>(b - a));
      a = b;
    }
    i = j;
  }
  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = reference[idx[i]];
  std::vector<double> scratch(n);
  const std::int64_t discordant = count_inversions(ys, scratch, 0, n);
  std::int64_t ties_y = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && ys[j] == ys[i]) ++j;
    ties_y += tied_pairs(static_cast<std::int64_t>(j - i));
    i = j;
  }
  const std::int64_t total = tied_pairs(static_cast<std::int64_t>(n));
  const std::int64_t numerator = total - ties_x - ties_y + ties_xy - 2 * discordant;
  return static_cast<double>(numerator) / static_cast<double>(total);
}

CoherenceScore coherence_score(const PpdSequence& seq) {
  if (seq.size() == 0) throw TooShort("coherence of an empty sequence is undefined");
  if (seq.size() == 1) return {1.0, 1, true};
  const auto wq = weighted_quantiles(seq);
  std::vector<double> positions(seq.size());
  std::iota(positions.begin(), positions.end(), 1.0);
  return {kendall_tau(wq, positions), seq.size(), false};
}

namespace {

std::vector<std::vector<double>> sorted_rows(const PpdSequence& seq) {
  std::vector<std::vector<double>> rows;
  rows.reserve(seq.size());
  for (const auto& r : seq.rows) rows.push_back(r.probs);
  std::sort(rows.begin(), rows.end());
  return rows;
}

}  // namespace

Verdict discriminate(const PpdSequence& original, const PpdSequence& permuted) {
  if (original.size() != permuted.size() || original.q() != permuted.q()) {
    throw MismatchedInputs("discriminate: sequences differ in shape");
  }
  if (sorted_rows(original) != sorted_rows(permuted)) {
    throw MismatchedInputs("discriminate: sequences are not reorderings of each other");
  }
  return coherence_score(original).tau > coherence_score(permuted).tau ? Verdict::original : Verdict::permuted;
}

}  // namespace cohere
