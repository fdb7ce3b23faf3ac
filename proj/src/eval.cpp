#include "cohere/eval.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <numeric>
#include <random>
#include <unordered_map>

#include "cohere/errors.hpp"
#include "cohere/insights.hpp"

namespace cohere {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double f_measure(double p, double r) { return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0; }

RougeScore make_score(std::size_t overlap, std::size_t candidate_total, std::size_t reference_total) {
  if (candidate_total == 0 || reference_total == 0) return {};
  const double p = static_cast<double>(overlap) / static_cast<double>(candidate_total);
  const double r = static_cast<double>(overlap) / static_cast<double>(reference_total);
  return {p, r, f_measure(p, r)};
}

std::unordered_map<std::string, std::size_t> ngram_counts(std::span<const std::string> tokens, int n) {
  std::unordered_map<std::string, std::size_t> counts;
  const auto len = static_cast<std::size_t>(n);
  if (tokens.size() < len) return counts;
  for (std::size_t i = 0; i + len <= tokens.size(); ++i) {
    std::string key;
    for (std::size_t k = 0; k < len; ++k) {
      if (k) key += '\x1f';
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

std::string format_row(const std::vector<std::string>& cells, const std::vector<int>& widths) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    char buf[128];
    if (i == 0) {
      std::snprintf(buf, sizeof buf, "%-*s", widths[i], cells[i].c_str());
    } else {
      std::snprintf(buf, sizeof buf, "  %*s", widths[i], cells[i].c_str());
    }
    line += buf;
  }
  return line + "\n";
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<int> widths(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) widths[i] = static_cast<int>(header[i].size());
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], static_cast<int>(row[i].size()));
  }
  std::string out = format_row(header, widths);
  int total = 0;
  for (int w : widths) total += w + 2;
  out += std::string(static_cast<std::size_t>(total - 2), '-') + "\n";
  for (const auto& row : rows) out += format_row(row, widths);
  return out;
}

}  // namespace

ReorderMetrics reorder_metrics(std::span<const std::size_t> predicted) {
  if (!is_permutation_of_range(predicted)) throw MismatchedInputs("prediction is not a permutation");
  const std::size_t n = predicted.size();
  if (n == 0) throw MismatchedInputs("empty prediction");
  std::size_t correct = 0;
  for (std::size_t k = 0; k < n; ++k) correct += predicted[k] == k ? 1 : 0;
  ReorderMetrics m;
  m.position_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  if (n == 1) {
    m.mean_tau = 1.0;
  } else {
    std::vector<double> pred(predicted.begin(), predicted.end());
    std::vector<double> identity(n);
    std::iota(identity.begin(), identity.end(), 0.0);
    m.mean_tau = kendall_tau(pred, identity);
  }
  return m;
}

ReorderMetrics reorder_metrics(const Ordering& predicted, const Document& doc) {
  if (predicted.permutation.size() != doc.size()) {
    throw MismatchedInputs("ordering covers " + std::to_string(predicted.permutation.size()) +
                           " sentences, document has " + std::to_string(doc.size()));
  }
  return reorder_metrics(predicted.permutation);
}

void ReorderAccumulator::add(std::span<const std::size_t> predicted) {
  const auto m = reorder_metrics(predicted);
  ++docs_;
  sentences_ += predicted.size();
  for (std::size_t k = 0; k < predicted.size(); ++k) correct_ += predicted[k] == k ? 1 : 0;
  tau_sum_ += m.mean_tau;
}

ReorderMetrics ReorderAccumulator::result() const {
  if (docs_ == 0) return {};
  return {static_cast<double>(correct_) / static_cast<double>(sentences_), tau_sum_ / static_cast<double>(docs_)};
}

DiscriminationMetrics run_discrimination(std::span<const Document> docs, std::size_t k, std::uint64_t seed,
                                         const TrialJudge& judge) {
  if (k < 1) throw std::invalid_argument("discrimination needs k >= 1 permutations");
  DiscriminationMetrics m;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto& doc = docs[d];
    if (doc.size() < 2) {
      m.excluded.push_back(doc.id);
      continue;
    }
    const auto perms = generate_permutations(doc, k, mix_seed(seed, d));
    ++m.documents;
    for (const auto& perm : perms.permutations) {
      ++m.trials;
      if (judge(doc, perm)) ++m.correct;
    }
  }
  m.accuracy = m.trials ? static_cast<double>(m.correct) / static_cast<double>(m.trials) : 0.0;
  return m;
}

DiscriminationMetrics discrimination_accuracy(const PpdSource& source, std::span<const Document> docs, std::size_t k,
                                              std::uint64_t seed) {
  const Document* cached_doc = nullptr;
  PpdSequence original;
  auto judge = [&](const Document& doc, std::span<const std::size_t> perm) {
    if (cached_doc != &doc) {
      original = source.predict(doc);
      cached_doc = &doc;
    }
    return discriminate(original, original.permuted(perm)) == Verdict::original;
  };
  return run_discrimination(docs, k, seed, judge);
}

RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
  const auto cand = ngram_counts(candidate, n);
  const auto ref = ngram_counts(reference, n);
  std::size_t overlap = 0;
  std::size_t cand_total = 0;
  std::size_t ref_total = 0;
  for (const auto& [gram, count] : cand) {
    cand_total += count;
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  for (const auto& [gram, count] : ref) ref_total += count;
  return make_score(overlap, cand_total, ref_total);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  // Allison-Dix / Hyyro bit-vector recurrence with bits indexed by positions in a.
  const std::size_t m = a.size();
  const std::size_t words = (m + 63) / 64;
  std::unordered_map<std::string_view, std::vector<std::uint64_t>> match;
  for (std::size_t i = 0; i < m; ++i) {
    auto& bits = match[a[i]];
    if (bits.empty()) bits.assign(words, 0);
    bits[i / 64] |= std::uint64_t{1} << (i % 64);
  }
  std::vector<std::uint64_t> v(words, ~std::uint64_t{0});
  for (const auto& token : b) {
    auto it = match.find(token);
    if (it == match.end()) continue;
    const auto& mb = it->second;
    std::uint64_t carry = 0;
    for (std::size_t w = 0; w < words; ++w) {
      const std::uint64_t u = v[w] & mb[w];
      const std::uint64_t sum = v[w] + u;
      const std::uint64_t with_carry = sum + carry;
      carry = (sum < v[w] ? 1 : 0) | (with_carry < sum ? 1 : 0);
      v[w] = with_carry | (v[w] - u);
    }
  }
  std::size_t zeros = 0;
  for (std::size_t w = 0; w < words; ++w) {
    std::uint64_t word = v[w];
    const std::size_t valid = std::min<std::size_t>(64, m - w * 64);
    if (valid < 64) word |= ~std::uint64_t{0} << valid;
    zeros += static_cast<std::size_t>(64 - std::popcount(word));
  }
  return zeros;
}

RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
  return make_score(lcs_length(candidate, reference), candidate.size(), reference.size());
}

BenchmarkTask parse_benchmark_task(std::string_view name) {
  if (name == "discrimination") return BenchmarkTask::discrimination;
  if (name == "reordering") return BenchmarkTask::reordering;
  if (name == "summarization") return BenchmarkTask::summarization;
  throw FormatError("unknown benchmark task '" + std::string(name) + "'");
}

namespace {

nlohmann::json discrimination_json(const DiscriminationMetrics& m, const std::string& model) {
  return {{"schema_version", kReportSchemaVersion},
          {"task", "discrimination"},
          {"model", model},
          {"accuracy", m.accuracy},
          {"trials", m.trials},
          {"correct", m.correct},
          {"n_docs", m.documents},
          {"excluded", m.excluded},
          {"folds", m.fold_accuracies}};
}

std::string discrimination_table(const DiscriminationMetrics& m, const std::string& model) {
  std::vector<std::vector<std::string>> rows{{"Random", "50.0", "-"}, {model, fixed(100.0 * m.accuracy, 1), "-"}};
  return render_table({"model", "acc", "tau"}, rows);
}

std::vector<std::vector<std::size_t>> fold_members(std::size_t n, std::size_t folds, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, 0xf01d));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> members(folds);
  for (std::size_t i = 0; i < n; ++i) members[i % folds].push_back(order[i]);
  for (auto& m : members) std::sort(m.begin(), m.end());
  return members;
}

BenchmarkReport discrimination_benchmark(const PpdSource& source, std::span<const Document> corpus,
                                         const BenchmarkParams& params) {
  auto metrics = discrimination_accuracy(source, corpus, params.permutations, params.seed);
  if (params.cv_folds > 1) {
    for (const auto& members : fold_members(corpus.size(), params.cv_folds, params.seed)) {
      std::vector<Document> fold;
      for (auto i : members) fold.push_back(corpus[i]);
      metrics.fold_accuracies.push_back(discrimination_accuracy(source, fold, params.permutations, params.seed).accuracy);
    }
  }
  return {discrimination_json(metrics, params.model_name), discrimination_table(metrics, params.model_name)};
}

BenchmarkReport reordering_benchmark(const PpdSource& source, std::span<const Document> corpus,
                                     const BenchmarkParams& params) {
  ReorderAccumulator model_acc;
  ReorderAccumulator random_acc;
  std::vector<std::string> excluded;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto& doc = corpus[d];
    if (doc.size() < 2) {
      excluded.push_back(doc.id);
      continue;
    }
    std::mt19937_64 rng(mix_seed(params.seed, d));
    std::vector<std::size_t> shuffle(doc.size());
    std::iota(shuffle.begin(), shuffle.end(), std::size_t{0});
    std::shuffle(shuffle.begin(), shuffle.end(), rng);
    // PPDs do not depend on sentence order, so the shuffled document's
    // sequence is the original one with rows permuted.
    const auto shuffled = source.predict(doc).permuted(shuffle);
    const auto ordering = reorder(shuffled);
    std::vector<std::size_t> predicted(doc.size());
    for (std::size_t k = 0; k < predicted.size(); ++k) predicted[k] = shuffle[ordering.permutation[k]];
    model_acc.add(predicted);

    std::vector<std::size_t> guess(doc.size());
    std::iota(guess.begin(), guess.end(), std::size_t{0});
    std::shuffle(guess.begin(), guess.end(), rng);
    random_acc.add(guess);
  }
  const auto m = model_acc.result();
  const auto r = random_acc.result();
  nlohmann::json json{{"schema_version", kReportSchemaVersion},
                      {"task", "reordering"},
                      {"model", params.model_name},
                      {"acc", m.position_accuracy},
                      {"tau", m.mean_tau},
                      {"n_docs", model_acc.documents()},
                      {"excluded", excluded},
                      {"rows",
                       {{{"model", "Random"}, {"acc", r.position_accuracy}, {"tau", r.mean_tau}},
                        {{"model", params.model_name}, {"acc", m.position_accuracy}, {"tau", m.mean_tau}}}}};
  std::vector<std::vector<std::string>> rows{
      {"Random", fixed(100.0 * r.position_accuracy, 1), fixed(r.mean_tau, 2)},
      {params.model_name, fixed(100.0 * m.position_accuracy, 1), fixed(m.mean_tau, 2)}};
  return {json, render_table({"model", "acc", "tau"}, rows)};
}

struct RougeAverages {
  RougeScore r1, r2, rl;
  std::size_t docs = 0;

  void add(std::span<const std::string> cand, std::span<const std::string> ref) {
    auto accumulate = [](RougeScore& total, const RougeScore& s) {
      total.precision += s.precision;
      total.recall += s.recall;
      total.f1 += s.f1;
    };
    accumulate(r1, rouge_n(cand, ref, 1));
    accumulate(r2, rouge_n(cand, ref, 2));
    accumulate(rl, rouge_l(cand, ref));
    ++docs;
  }

  static nlohmann::json to_json(const RougeScore& s, std::size_t docs) {
    const double n = docs ? static_cast<double>(docs) : 1.0;
    return {{"precision", s.precision / n}, {"recall", s.recall / n}, {"f1", s.f1 / n}};
  }

  nlohmann::json row(const std::string& model) const {
    return {{"model", model},
            {"rouge1", to_json(r1, docs)},
            {"rouge2", to_json(r2, docs)},
            {"rougeL", to_json(rl, docs)},
            {"R1", docs ? r1.f1 / static_cast<double>(docs) : 0.0},
            {"R2", docs ? r2.f1 / static_cast<double>(docs) : 0.0},
            {"RL", docs ? rl.f1 / static_cast<double>(docs) : 0.0}};
  }
};

std::vector<std::string> concat_tokens(const Document& doc, std::span<const std::size_t> selected) {
  std::vector<std::string> out;
  for (auto i : selected) out.insert(out.end(), doc.sentences[i].tokens.begin(), doc.sentences[i].tokens.end());
  return out;
}

BenchmarkReport summarization_benchmark(const PpdSource& source, std::span<const Document> corpus,
                                        const BenchmarkParams& params) {
  RougeAverages ppd;
  RougeAverages lead;
  std::vector<std::string> excluded;
  for (const auto& doc : corpus) {
    auto it = doc.meta.find(params.reference_key);
    if (it == doc.meta.end() || doc.empty()) {
      excluded.push_back(doc.id);
      continue;
    }
    const auto reference = tokenize(it->second);
    const auto selection = summarize(source.predict(doc), params.summary_sentences);
    ppd.add(concat_tokens(doc, selection.selected), reference);
    std::vector<std::size_t> first(std::min(params.summary_sentences, doc.size()));
    std::iota(first.begin(), first.end(), std::size_t{0});
    lead.add(concat_tokens(doc, first), reference);
  }
  if (ppd.docs == 0) {
    throw FormatError("no document carries a reference summary under meta key '" + params.reference_key + "'");
  }
  const std::string lead_name = "Lead-" + std::to_string(params.summary_sentences);
  nlohmann::json json{{"schema_version", kReportSchemaVersion},
                      {"task", "summarization"},
                      {"model", params.model_name},
                      {"n_docs", ppd.docs},
                      {"summary_sentences", params.summary_sentences},
                      {"excluded", excluded},
                      {"rows", {lead.row(lead_name), ppd.row(params.model_name)}}};
  std::vector<std::vector<std::string>> rows;
  for (const auto& row : json["rows"]) {
    rows.push_back({row["model"].get<std::string>(), fixed(100.0 * row["R1"].get<double>(), 1),
                    fixed(100.0 * row["R2"].get<double>(), 1), fixed(100.0 * row["RL"].get<double>(), 1)});
  }
  return {json, render_table({"model", "R1", "R2", "RL"}, rows)};
}

}  // namespace

BenchmarkReport run_benchmark(BenchmarkTask task, const PpdSource& source, std::span<const Document> corpus,
                              const BenchmarkParams& params) {
  switch (task) {
    case BenchmarkTask::discrimination:
      return discrimination_benchmark(source, corpus, params);
    case BenchmarkTask::reordering:
      return reordering_benchmark(source, corpus, params);
    case BenchmarkTask::summarization:
      return summarization_benchmark(source, corpus, params);
  }
  throw FormatError("unknown benchmark task");
}

BenchmarkReport cross_validate_discrimination(std::span<const Document> corpus, const FoldTrainer& trainer,
                                              const BenchmarkParams& params) {
  const std::size_t folds = std::max<std::size_t>(params.cv_folds, 2);
  if (corpus.size() < folds) throw std::invalid_argument("fewer documents than folds");
  const auto members = fold_members(corpus.size(), folds, params.seed);
  DiscriminationMetrics total;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<Document> train_docs;
    std::vector<Document> test_docs;
    std::vector<bool> held_out(corpus.size(), false);
    for (auto i : members[f]) held_out[i] = true;
    for (std::size_t i = 0; i < corpus.size(); ++i) (held_out[i] ? test_docs : train_docs).push_back(corpus[i]);
    const auto source = trainer(train_docs);
    const auto m = discrimination_accuracy(*source, test_docs, params.permutations, mix_seed(params.seed, f));
    total.trials += m.trials;
    total.correct += m.correct;
    total.documents += m.documents;
    total.excluded.insert(total.excluded.end(), m.excluded.begin(), m.excluded.end());
    total.fold_accuracies.push_back(m.accuracy);
  }
  total.accuracy = total.trials ? static_cast<double>(total.correct) / static_cast<double>(total.trials) : 0.0;
  return {discrimination_json(total, params.model_name), discrimination_table(total, params.model_name)};
}

}  // namespace cohere
