#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cohere/coherence.hpp"
#include "cohere/corpus.hpp"

namespace cohere {

struct SummarySelection {
  std::size_t n = 0;
  /// Sentence indices, highest first-quantile probability first.
  std::vector<std::size_t> selected;
  /// First-quantile probability of every sentence, by sentence index.
  std::vector<double> scores;
};

/// Top-n sentences by first-quantile probability; ties go to the earlier
/// sentence.
SummarySelection summarize(const PpdSequence& seq, std::size_t n);

/// Jensen-Shannon divergence in nats, within [0, ln 2].
double jensen_shannon(std::span<const double> p, std::span<const double> q);

struct IncoherenceBoundary {
  std::size_t first = 0;  // boundary lies between `first` and `first + 1`
  double divergence = 0;
};

inline constexpr double kDefaultJsdThreshold = 0.2;

/// Adjacent pairs whose PPDs diverge by more than `threshold`. Throws
/// TooShort for fewer than two sentences.
std::vector<IncoherenceBoundary> incoherence_points(const PpdSequence& seq, double threshold = kDefaultJsdThreshold);

struct SubsectionSegmentation {
  std::vector<std::pair<std::size_t, std::size_t>> segments;  // inclusive [start, end]
};

/// Cuts before sentence i whenever its weighted quantile drops by at least
/// `drop_delta` relative to sentence i - 1. Default delta is q / 3.
SubsectionSegmentation detect_subsections(const PpdSequence& seq, std::optional<double> drop_delta = std::nullopt);

struct HeatmapData {
  std::vector<std::vector<double>> rows;
  std::vector<double> weighted_quantiles;
  std::vector<std::string> sentence_texts;
  std::vector<IncoherenceBoundary> boundaries;
  std::vector<std::pair<std::size_t, std::size_t>> segments;
  std::vector<std::size_t> summary;
};

/// Throws MismatchedInputs when the sequence and document disagree in length.
HeatmapData export_heatmap(const PpdSequence& seq, const Document& doc);

struct InsightOptions {
  std::size_t n_summary = 3;
  double jsd_threshold = kDefaultJsdThreshold;
  std::optional<double> drop_delta;
};

/// export_heatmap plus boundaries, segments and summary.
HeatmapData analyze_insights(const PpdSequence& seq, const Document& doc, const InsightOptions& options = {});

/// {"sentences", "ppd", "wq", "boundaries", "segments", "summary"}; each
/// boundary is {"between": [i, i+1], "divergence": d}.
nlohmann::json heatmap_to_json(const HeatmapData& data);
HeatmapData heatmap_from_json(const nlohmann::json& j);

/// Standalone SVG: one row per sentence, white-to-red cells scaled to the row
/// maximum, a black dot at each weighted quantile, red rules at boundaries.
std::string render_heatmap_svg(const HeatmapData& data);

}  // namespace cohere
