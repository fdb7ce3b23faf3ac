#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "cohere/coherence.hpp"
#include "cohere/errors.hpp"
#include "test_util.hpp"

namespace cohere {
namespace {

// O(n^2) pair enumeration; tied pairs in either list score zero.
double tau_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  long long s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const int da = (a[i] < a[j]) - (a[i] > a[j]);
      const int db = (b[i] < b[j]) - (b[i] > b[j]);
      s += da * db;
    }
  }
  return static_cast<double>(s) / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

std::vector<double> ranks(std::size_t n) {
  std::vector<double> r(n);
  std::iota(r.begin(), r.end(), 1.0);
  return r;
}

// q=3 row with the given weighted quantile, spread over the two nearest bins.
Ppd row_with_wq(double wq) {
  Ppd p{{0, 0, 0}};
  const double lo = std::floor(wq);
  const auto i = static_cast<std::size_t>(lo) - 1;
  if (i >= 2) {
    p.probs[2] = 1.0;
    return p;
  }
  p.probs[i + 1] = wq - lo;
  p.probs[i] = 1.0 - (wq - lo);
  return p;
}

PpdSequence seq_of(const std::vector<double>& wqs) {
  PpdSequence s;
  s.document_id = "d";
  for (double w : wqs) s.rows.push_back(row_with_wq(w));
  s.degenerate.assign(wqs.size(), 0);
  return s;
}

TEST(WeightedQuantile, ClosedForms) {
  EXPECT_EQ(weighted_quantile(Ppd{{1, 0, 0, 0}}), 1.0);
  EXPECT_NEAR(weighted_quantile(Ppd::uniform(10)), 5.5, 1e-12);
  EXPECT_NEAR(weighted_quantile(Ppd{{0.2, 0.8}}), 1.8, 1e-12);
  EXPECT_EQ(weighted_quantile(Ppd{{0, 0, 1}}), 3.0);
}

TEST(WeightedQuantile, BoundedByOneAndQ) {
  std::mt19937_64 rng(1);
  std::gamma_distribution<double> g(0.5, 1.0);
  for (int k = 0; k < 500; ++k) {
    Ppd p;
    double sum = 0;
    for (int i = 0; i < 7; ++i) sum += p.probs.emplace_back(g(rng));
    for (auto& x : p.probs) x /= sum;
    const double w = weighted_quantile(p);
    EXPECT_GE(w, 1.0 - 1e-12);
    EXPECT_LE(w, 7.0 + 1e-12);
  }
}

TEST(Reorder, SortsAscending) {
  EXPECT_EQ(reorder(seq_of({2.1, 1.3, 3.0})).permutation, (std::vector<std::size_t>{1, 0, 2}));
}

TEST(Reorder, StableOnTies) {
  EXPECT_EQ(reorder(seq_of({2.0, 2.0, 2.0, 2.0})).permutation, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(reorder(seq_of({2.5, 1.5, 2.5, 1.5})).permutation, (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(Reorder, Idempotent) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(1.0, 3.0);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> w(9);
    for (auto& x : w) x = u(rng);
    const auto s = seq_of(w);
    const auto once = reorder(s);
    const auto sorted = s.permuted(once.permutation);
    std::vector<std::size_t> identity(9);
    std::iota(identity.begin(), identity.end(), std::size_t{0});
    EXPECT_EQ(reorder(sorted).permutation, identity);
    const auto& wq = once.weighted_quantiles;
    for (std::size_t i = 1; i < 9; ++i) EXPECT_LE(wq[once.permutation[i - 1]], wq[once.permutation[i]]);
    EXPECT_EQ(coherence_score(sorted).tau, 1.0);
  }
}

TEST(KendallTau, Examples) {
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> r{5, 4, 3, 2, 1};
  EXPECT_EQ(kendall_tau(a, a), 1.0);
  EXPECT_EQ(kendall_tau(r, a), -1.0);
  EXPECT_NEAR(kendall_tau(std::vector<double>{2, 1, 3}, std::vector<double>{1, 2, 3}), 1.0 / 3.0, 1e-15);
}

TEST(KendallTau, TiesScoreZero) {
  EXPECT_EQ(kendall_tau(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), 0.0);
  EXPECT_NEAR(kendall_tau(std::vector<double>{1, 1, 2}, std::vector<double>{1, 2, 3}), 2.0 / 3.0, 1e-15);
}

TEST(KendallTau, Errors) {
  EXPECT_THROW(kendall_tau(std::vector<double>{1}, std::vector<double>{1}), TooShort);
  EXPECT_THROW(kendall_tau(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), MismatchedInputs);
}

TEST(KendallTau, MatchesOracleOnAllSmallPermutations) {
  for (std::size_t n = 2; n <= 6; ++n) {
    std::vector<double> p = ranks(n);
    const auto ref = ranks(n);
    do {
      ASSERT_EQ(kendall_tau(p, ref), tau_oracle(p, ref));
    } while (std::next_permutation(p.begin(), p.end()));
  }
}

TEST(KendallTau, MatchesOracleWithTiesBothSides) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 500; ++k) {
    const std::size_t n = 2 + rng() % 30;
    std::uniform_int_distribution<int> v(0, static_cast<int>(n / 2));
    std::vector<double> a(n), b(n);
    for (auto& x : a) x = v(rng);
    for (auto& x : b) x = v(rng);
    ASSERT_EQ(kendall_tau(a, b), tau_oracle(a, b));
  }
}

TEST(KendallTau, AntisymmetricUnderReversal) {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> a(12);
    for (auto& x : a) x = static_cast<double>(rng() % 100);
    auto rev = a;
    std::reverse(rev.begin(), rev.end());
    EXPECT_EQ(kendall_tau(rev, ranks(12)), -kendall_tau(a, ranks(12)));
  }
}

TEST(CoherenceScore, Examples) {
  EXPECT_EQ(coherence_score(seq_of({1.1, 1.5, 2.0, 2.9})).tau, 1.0);
  EXPECT_EQ(coherence_score(seq_of({2.9, 2.0, 1.5, 1.1})).tau, -1.0);
  const auto s = coherence_score(seq_of({1.5, 1.2, 2.8}));
  EXPECT_NEAR(s.tau, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(s.n, 3u);
  EXPECT_FALSE(s.degenerate);
}

TEST(CoherenceScore, SingleSentenceIsDegenerateOne) {
  const auto s = coherence_score(seq_of({1.7}));
  EXPECT_EQ(s.tau, 1.0);
  EXPECT_EQ(s.n, 1u);
  EXPECT_TRUE(s.degenerate);
}

TEST(Discriminate, HigherCoherenceWins) {
  // tau 1 against tau 1/3.
  const auto original = seq_of({1.2, 1.5, 2.8});
  const auto permuted = original.permuted(std::vector<std::size_t>{1, 0, 2});
  EXPECT_EQ(discriminate(original, permuted), Verdict::original);
  EXPECT_EQ(discriminate(permuted, original), Verdict::permuted);
}

TEST(Discriminate, TieGoesToPermuted) {
  const auto original = seq_of({2.0, 2.0, 2.0});
  const auto permuted = original.permuted(std::vector<std::size_t>{2, 0, 1});
  EXPECT_EQ(discriminate(original, permuted), Verdict::permuted);
}

TEST(Discriminate, IncreasingBeatsItsReversal) {
  const auto original = seq_of({1.1, 1.4, 1.9, 2.3, 2.95});
  const auto reversed = original.permuted(std::vector<std::size_t>{4, 3, 2, 1, 0});
  EXPECT_EQ(discriminate(original, reversed), Verdict::original);
}

TEST(Discriminate, DifferentRowsThrow) {
  EXPECT_THROW(discriminate(seq_of({1.1, 1.4}), seq_of({1.1, 1.5})), MismatchedInputs);
  EXPECT_THROW(discriminate(seq_of({1.1, 1.4}), seq_of({1.1, 1.4, 2.0})), MismatchedInputs);
}

class PpdSequenceTest : public ::testing::Test {
 protected:
  PpdSequenceTest()
      : tokens_(testing::numbered_tokens(30)),
        store_(testing::random_store(tokens_, 5, 2)),
        vocab_(tokens_, 100),
        model_(init_model(testing::small_config(15, 15, 6, 4))) {}

  std::vector<std::string> tokens_;
  VectorStore store_;
  Vocab vocab_;
  PositionModel model_;
};

TEST_F(PpdSequenceTest, OneSimplexRowPerSentence) {
  const auto doc = testing::random_documents(1, 15, 15, 30, 5).front();
  const auto seq = ppd_sequence(model_, doc, store_, vocab_);
  ASSERT_EQ(seq.size(), 15u);
  EXPECT_EQ(seq.q(), 15u);
  for (const auto& r : seq.rows) EXPECT_TRUE(r.on_simplex(1e-6));
}

TEST_F(PpdSequenceTest, PermutingSentencesPermutesRows) {
  std::mt19937_64 rng(6);
  for (const auto& doc : testing::random_documents(10, 2, 12, 30, 7)) {
    std::vector<std::size_t> order(doc.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto before = ppd_sequence(model_, doc, store_, vocab_);
    const auto after = ppd_sequence(model_, doc.permuted(order), store_, vocab_);
    for (std::size_t k = 0; k < order.size(); ++k) EXPECT_EQ(after.rows[k], before.rows[order[k]]);
  }
}

TEST_F(PpdSequenceTest, SingleSentenceAndDegenerateRows) {
  const auto one = Document::from_sentences("one", {"t1 t2 t3"});
  EXPECT_EQ(ppd_sequence(model_, one, store_, vocab_).size(), 1u);
  Document doc = Document::from_sentences("d", {"t1 t2", "t3"});
  doc.sentences[1].tokens.clear();
  const auto seq = ppd_sequence(model_, doc, store_, vocab_);
  EXPECT_EQ(seq.degenerate, (std::vector<std::uint8_t>{0, 1}));
  EXPECT_EQ(seq.rows[1], Ppd::uniform(15));
}

TEST_F(PpdSequenceTest, WrongStoreDimensionThrows) {
  const auto doc = Document::from_sentences("d", {"t1"});
  EXPECT_THROW(ppd_sequence(model_, doc, testing::random_store(tokens_, 4, 1), vocab_), VersionMismatch);
  EXPECT_THROW(ppd_sequence(model_, Document{}, store_, vocab_), EmptyDocument);
}

}  // namespace
}  // namespace cohere
