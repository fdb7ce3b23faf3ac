#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <gtest/gtest.h>

#include "cohere/errors.hpp"
#include "cohere/insights.hpp"
#include "test_util.hpp"

namespace cohere {
namespace {

PpdSequence seq_from(const std::vector<std::vector<double>>& rows) {
  PpdSequence s;
  s.document_id = "d";
  for (const auto& r : rows) s.rows.push_back(Ppd{r});
  s.degenerate.assign(rows.size(), 0);
  return s;
}

std::vector<std::vector<double>> random_rows(std::size_t n, std::size_t q, std::mt19937_64& rng,
                                             bool coarse = false) {
  std::gamma_distribution<double> g(0.7, 1.0);
  std::uniform_int_distribution<int> small(0, 3);
  std::vector<std::vector<double>> rows(n, std::vector<double>(q));
  for (auto& r : rows) {
    double sum = 0;
    for (auto& x : r) sum += (x = coarse ? small(rng) + 0.0 : g(rng));
    if (sum == 0) r[0] = sum = 1;
    for (auto& x : r) x /= sum;
  }
  return rows;
}

// Exhaustive selection: repeatedly take the best remaining sentence.
std::vector<std::size_t> top_n_oracle(const std::vector<double>& scores, std::size_t n) {
  std::vector<std::size_t> out;
  std::vector<bool> used(scores.size(), false);
  for (std::size_t round = 0; round < std::min(n, scores.size()); ++round) {
    std::size_t best = scores.size();
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (used[i]) continue;
      if (best == scores.size() || scores[i] > scores[best]) best = i;
    }
    used[best] = true;
    out.push_back(best);
  }
  return out;
}

TEST(Summarize, PicksHighestFirstQuantileMass) {
  const auto seq = seq_from({{0.1, 0.9}, {0.8, 0.2}, {0.3, 0.7}, {0.8, 0.2}});
  const auto sel = summarize(seq, 2);
  EXPECT_EQ(sel.selected, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(sel.scores, (std::vector<double>{0.1, 0.8, 0.3, 0.8}));
  EXPECT_EQ(sel.n, 2u);
}

TEST(Summarize, LargeNTakesEverything) {
  const auto seq = seq_from({{0.1, 0.9}, {0.8, 0.2}, {0.3, 0.7}});
  EXPECT_EQ(summarize(seq, 3).selected, (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(summarize(seq, 10).selected.size(), 3u);
  EXPECT_THROW(summarize(seq, 0), std::invalid_argument);
}

TEST(Summarize, MatchesBruteForceOracle) {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 300; ++k) {
    const auto rows = random_rows(20, 10, rng, k % 2 == 0);
    const auto seq = seq_from(rows);
    const std::size_t n = 1 + static_cast<std::size_t>(k) % 25;
    const auto sel = summarize(seq, n);
    ASSERT_EQ(sel.selected, top_n_oracle(sel.scores, n));
    for (std::size_t i = 1; i < sel.selected.size(); ++i) {
      EXPECT_GE(sel.scores[sel.selected[i - 1]], sel.scores[sel.selected[i]]);
    }
  }
}

TEST(JensenShannon, ClosedForms) {
  const std::vector<double> a{0.2, 0.3, 0.5};
  EXPECT_EQ(jensen_shannon(a, a), 0.0);
  EXPECT_NEAR(jensen_shannon(std::vector<double>{1, 0, 0}, std::vector<double>{0, 0, 1}), std::numbers::ln2, 1e-15);
  // JSD([1,0],[0.5,0.5]) = 0.5 ln(4/3) + 0.25 ln(2/3)... computed directly.
  const double m0 = 0.75, m1 = 0.25;
  const double want = 0.5 * (1.0 * std::log(1.0 / m0)) + 0.5 * (0.5 * std::log(0.5 / m0) + 0.5 * std::log(0.5 / m1));
  EXPECT_NEAR(jensen_shannon(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}), want, 1e-15);
  EXPECT_THROW(jensen_shannon(std::vector<double>{1}, std::vector<double>{0.5, 0.5}), MismatchedInputs);
}

TEST(JensenShannon, SymmetricAndBounded) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 500; ++k) {
    const auto rows = random_rows(2, 6, rng, k % 3 == 0);
    const double d = jensen_shannon(rows[0], rows[1]);
    EXPECT_NEAR(d, jensen_shannon(rows[1], rows[0]), 1e-15);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, std::numbers::ln2);
    if (rows[0] != rows[1]) EXPECT_GT(d, 0.0);
  }
}

TEST(IncoherencePoints, Examples) {
  EXPECT_TRUE(incoherence_points(seq_from({{0.5, 0.5}, {0.5, 0.5}})).empty());
  const auto b = incoherence_points(seq_from({{1, 0, 0}, {1, 0, 0}, {0, 0, 1}}));
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0].first, 1u);
  EXPECT_NEAR(b[0].divergence, 0.693147, 1e-6);
  EXPECT_TRUE(incoherence_points(seq_from({{1, 0}, {0, 1}}), std::numeric_limits<double>::infinity()).empty());
  EXPECT_THROW(incoherence_points(seq_from({{1, 0}})), TooShort);
}

TEST(IncoherencePoints, SortedAndAboveThreshold) {
  std::mt19937_64 rng(3);
  const auto seq = seq_from(random_rows(30, 5, rng));
  const auto b = incoherence_points(seq, 0.1);
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_GT(b[i].divergence, 0.1);
    if (i) EXPECT_LT(b[i - 1].first, b[i].first);
  }
  std::size_t expected = 0;
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) expected += jensen_shannon(seq.rows[i].probs, seq.rows[i + 1].probs) > 0.1;
  EXPECT_EQ(b.size(), expected);
}

// q=10 row whose weighted quantile is exactly `wq` for wq with one decimal.
std::vector<double> row10(double wq) {
  std::vector<double> r(10, 0.0);
  const double lo = std::floor(wq);
  const double frac = wq - lo;
  r[static_cast<std::size_t>(lo) - 1] = 1.0 - frac;
  if (frac > 0) r[static_cast<std::size_t>(lo)] = frac;
  return r;
}

TEST(DetectSubsections, MonotoneIsOneSegment) {
  const auto seq = seq_from({row10(1.0), row10(2.5), row10(2.5), row10(9.0)});
  EXPECT_EQ(detect_subsections(seq).segments, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 3}}));
}

TEST(DetectSubsections, ResetStartsNewSegment) {
  const auto seq = seq_from({row10(1.2), row10(4.0), row10(8.2), row10(2.1), row10(6.0)});
  EXPECT_EQ(detect_subsections(seq, 10.0 / 3.0).segments,
            (std::vector<std::pair<std::size_t, std::size_t>>{{0, 2}, {3, 4}}));
  EXPECT_EQ(detect_subsections(seq).segments, detect_subsections(seq, 10.0 / 3.0).segments);
  EXPECT_EQ(detect_subsections(seq, 7.0).segments.size(), 1u);
  EXPECT_THROW(detect_subsections(seq, 0.0), std::invalid_argument);
}

TEST(DetectSubsections, AlwaysPartitions) {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 200; ++k) {
    const std::size_t n = 1 + rng() % 25;
    const auto seq = seq_from(random_rows(n, 8, rng, true));
    const auto segs = detect_subsections(seq, 0.5 + (k % 5)).segments;
    std::size_t next = 0;
    for (const auto& [s, e] : segs) {
      EXPECT_EQ(s, next);
      EXPECT_LE(s, e);
      next = e + 1;
    }
    EXPECT_EQ(next, n);
  }
}

Document doc_with(std::size_t n) {
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < n; ++i) texts.push_back("Sentence number " + std::to_string(i) + ".");
  return Document::from_sentences("d", texts);
}

TEST(Heatmap, AlignedExport) {
  const auto seq = seq_from({{0.7, 0.2, 0.1}, {0.2, 0.5, 0.3}, {0.0, 0.1, 0.9}});
  const auto data = export_heatmap(seq, doc_with(3));
  EXPECT_EQ(data.rows.size(), 3u);
  EXPECT_EQ(data.sentence_texts.size(), 3u);
  ASSERT_EQ(data.weighted_quantiles.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(data.weighted_quantiles[i], weighted_quantile(seq.rows[i]));
  EXPECT_THROW(export_heatmap(seq, doc_with(2)), MismatchedInputs);
}

TEST(Heatmap, JsonRoundTrip) {
  std::mt19937_64 rng(5);
  const auto seq = seq_from(random_rows(6, 5, rng));
  const auto data = analyze_insights(seq, doc_with(6), {2, 0.05, std::nullopt});
  const auto j = heatmap_to_json(data);
  for (const char* key : {"sentences", "ppd", "wq", "boundaries", "segments", "summary"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  const auto back = heatmap_from_json(nlohmann::json::parse(j.dump()));
  ASSERT_EQ(back.rows.size(), data.rows.size());
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(back.rows[i][c], data.rows[i][c], 1e-9);
    EXPECT_NEAR(back.weighted_quantiles[i], data.weighted_quantiles[i], 1e-9);
  }
  EXPECT_EQ(back.sentence_texts, data.sentence_texts);
  EXPECT_EQ(back.segments, data.segments);
  EXPECT_EQ(back.summary, data.summary);
  ASSERT_EQ(back.boundaries.size(), data.boundaries.size());
  for (std::size_t i = 0; i < data.boundaries.size(); ++i) {
    EXPECT_EQ(back.boundaries[i].first, data.boundaries[i].first);
    EXPECT_NEAR(back.boundaries[i].divergence, data.boundaries[i].divergence, 1e-9);
    EXPECT_EQ(j["boundaries"][i]["between"][1], data.boundaries[i].first + 1);
  }
}

TEST(Heatmap, SingleSentenceAnalysis) {
  const auto data = analyze_insights(seq_from({{0.6, 0.4}}), doc_with(1));
  EXPECT_TRUE(data.boundaries.empty());
  EXPECT_EQ(data.summary, (std::vector<std::size_t>{0}));
  EXPECT_EQ(data.segments.size(), 1u);
}

TEST(Heatmap, MalformedJsonThrows) {
  EXPECT_THROW(heatmap_from_json(nlohmann::json::parse(R"({"sentences": ["a"]})")), FormatError);
  const auto j = nlohmann::json::parse(R"({"sentences": ["a", "b"], "ppd": [[1.0]], "wq": [1.0]})");
  EXPECT_THROW(heatmap_from_json(j), MismatchedInputs);
}

TEST(Heatmap, SvgHasOneDotPerRow) {
  const auto seq = seq_from({{0.7, 0.3}, {0.4, 0.6}, {0.0, 1.0}});
  const auto svg = render_heatmap_svg(analyze_insights(seq, doc_with(3)));
  std::size_t circles = 0;
  for (auto pos = svg.find("<circle"); pos != std::string::npos; pos = svg.find("<circle", pos + 1)) ++circles;
  EXPECT_EQ(circles, 3u);
  EXPECT_NE(svg.find("rgb(255,255,255)"), std::string::npos);
  EXPECT_NE(svg.find("rgb(255,0,0)"), std::string::npos);
}

}  // namespace
}  // namespace cohere
