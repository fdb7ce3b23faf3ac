#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace cohere {

/// Predicted position distribution: probabilities over q position quantiles,
/// stored 0-based (probs[0] is the first quantile).
struct Ppd {
  std::vector<double> probs;

  std::size_t q() const { return probs.size(); }

  static Ppd uniform(std::size_t q) { return {std::vector<double>(q, 1.0 / static_cast<double>(q))}; }

  bool on_simplex(double tolerance = 1e-6) const {
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0)) return false;
      sum += p;
    }
    return !probs.empty() && std::abs(sum - 1.0) <= tolerance;
  }

  friend bool operator==(const Ppd&, const Ppd&) = default;
};

}  // namespace cohere
