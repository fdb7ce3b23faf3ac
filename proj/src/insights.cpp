#include "cohere/insights.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "cohere/errors.hpp"

namespace cohere {

SummarySelection summarize(const PpdSequence& seq, std::size_t n) {
  if (n < 1) throw std::invalid_argument("summarize: n must be >= 1");
  SummarySelection sel;
  sel.n = n;
  sel.scores.reserve(seq.size());
  for (const auto& row : seq.rows) sel.scores.push_back(row.probs.at(0));
  std::vector<std::size_t> idx(seq.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto k = std::min(n, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return sel.scores[a] != sel.scores[b] ? sel.scores[a] > sel.scores[b] : a < b;
                    });
  sel.selected.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  return sel;
}

double jensen_shannon(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw MismatchedInputs("jensen_shannon: distributions differ in length");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0) js += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0) js += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::clamp(js, 0.0, std::numbers::ln2);
}

std::vector<IncoherenceBoundary> incoherence_points(const PpdSequence& seq, double threshold) {
  if (seq.size() < 2) throw TooShort("incoherence_points needs at least 2 sentences");
  if (!(threshold >= 0)) throw std::invalid_argument("threshold must be >= 0");
  std::vector<IncoherenceBoundary> out;
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    const double d = jensen_shannon(seq.rows[i].probs, seq.rows[i + 1].probs);
    if (d > threshold) out.push_back({i, d});
  }
  return out;
}

SubsectionSegmentation detect_subsections(const PpdSequence& seq, std::optional<double> drop_delta) {
  if (seq.size() == 0) throw TooShort("detect_subsections needs at least 1 sentence");
  const double delta = drop_delta.value_or(static_cast<double>(seq.q()) / 3.0);
  if (!(delta > 0)) throw std::invalid_argument("drop_delta must be > 0");
  const auto wq = weighted_quantiles(seq);
  SubsectionSegmentation seg;
  std::size_t start = 0;
  for (std::size_t i = 1; i < wq.size(); ++i) {
    if (wq[i] <= wq[i - 1] - delta) {
      seg.segments.emplace_back(start, i - 1);
      start = i;
    }
  }
  seg.segments.emplace_back(start, wq.size() - 1);
  return seg;
}

HeatmapData export_heatmap(const PpdSequence& seq, const Document& doc) {
  if (seq.size() != doc.size()) throw MismatchedInputs("heatmap: PPD rows and sentences differ in count");
  HeatmapData data;
  data.rows.reserve(seq.size());
  for (const auto& row : seq.rows) data.rows.push_back(row.probs);
  data.weighted_quantiles = weighted_quantiles(seq);
  for (const auto& s : doc.sentences) data.sentence_texts.push_back(s.text);
  return data;
}

HeatmapData analyze_insights(const PpdSequence& seq, const Document& doc, const InsightOptions& options) {
  auto data = export_heatmap(seq, doc);
  if (seq.size() >= 2) data.boundaries = incoherence_points(seq, options.jsd_threshold);
  data.segments = detect_subsections(seq, options.drop_delta).segments;
  data.summary = summarize(seq, options.n_summary).selected;
  return data;
}

nlohmann::json heatmap_to_json(const HeatmapData& data) {
  nlohmann::json boundaries = nlohmann::json::array();
  for (const auto& b : data.boundaries) {
    boundaries.push_back({{"between", {b.first, b.first + 1}}, {"divergence", b.divergence}});
  }
  nlohmann::json segments = nlohmann::json::array();
  for (const auto& [s, e] : data.segments) segments.push_back({s, e});
  return {{"sentences", data.sentence_texts}, {"ppd", data.rows},     {"wq", data.weighted_quantiles},
          {"boundaries", boundaries},       {"segments", segments}, {"summary", data.summary}};
}

HeatmapData heatmap_from_json(const nlohmann::json& j) {
  HeatmapData data;
  try {
    data.sentence_texts = j.at("sentences").get<std::vector<std::string>>();
    data.rows = j.at("ppd").get<std::vector<std::vector<double>>>();
    data.weighted_quantiles = j.at("wq").get<std::vector<double>>();
    for (const auto& b : j.value("boundaries", nlohmann::json::array())) {
      data.boundaries.push_back({b.at("between").at(0).get<std::size_t>(), b.at("divergence").get<double>()});
    }
    for (const auto& s : j.value("segments", nlohmann::json::array())) {
      data.segments.emplace_back(s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>());
    }
    data.summary = j.value("summary", std::vector<std::size_t>{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad heatmap JSON: ") + e.what());
  }
  if (data.rows.size() != data.weighted_quantiles.size() || data.rows.size() != data.sentence_texts.size()) {
    throw MismatchedInputs("heatmap JSON arrays are not aligned");
  }
  return data;
}

namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_heatmap_svg(const HeatmapData& data) {
  constexpr int kCell = 24;
  constexpr int kLabelWidth = 520;
  constexpr int kMargin = 10;
  const std::size_t q = data.rows.empty() ? 0 : data.rows.front().size();
  const int width = kMargin * 2 + static_cast<int>(q) * kCell + kLabelWidth;
  const int height = kMargin * 2 + static_cast<int>(data.rows.size()) * kCell;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    const auto& row = data.rows[r];
    const double row_max = *std::max_element(row.begin(), row.end());
    const int y = kMargin + static_cast<int>(r) * kCell;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double v = row_max > 0 ? row[c] / row_max : 0.0;
      const int fade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
      svg << "<rect x=\"" << kMargin + static_cast<int>(c) * kCell << "\" y=\"" << y << "\" width=\"" << kCell
          << "\" height=\"" << kCell << "\" fill=\"rgb(255," << fade << "," << fade << ")\" stroke=\"#ddd\"/>\n";
    }
    const double cx = kMargin + (data.weighted_quantiles[r] - 0.5) * kCell;
    svg << "<circle cx=\"" << cx << "\" cy=\"" << y + kCell / 2 << "\" r=\"4\" fill=\"black\"/>\n";
    const bool in_summary = std::find(data.summary.begin(), data.summary.end(), r) != data.summary.end();
    svg << "<text x=\"" << kMargin * 2 + static_cast<int>(q) * kCell << "\" y=\"" << y + kCell * 2 / 3 << "\""
        << (in_summary ? " font-weight=\"bold\"" : "") << ">" << r + 1 << ". "
        << xml_escape(data.sentence_texts[r].substr(0, 80)) << "</text>\n";
  }
  for (const auto& b : data.boundaries) {
    const int y = kMargin + static_cast<int>(b.first + 1) * kCell;
    svg << "<line x1=\"" << kMargin << "\" y1=\"" << y << "\" x2=\"" << kMargin + static_cast<int>(q) * kCell
        << "\" y2=\"" << y << "\" stroke=\"darkred\" stroke-width=\"3\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace cohere
