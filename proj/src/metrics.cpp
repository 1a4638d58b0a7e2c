#include "shapeformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "shapeformer/error.hpp"

namespace shapeformer::metrics {

double complexity_estimate(std::span<const double> x) {
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    const double d = x[i + 1] - x[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  SF_REQUIRE(a.size() == b.size(), "euclidean: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

namespace {

double correction_factor(double ce_a, double ce_b) {
  const double lo = std::min(ce_a, ce_b);
  const double hi = std::max(ce_a, ce_b);
  if (hi == 0.0) return 1.0;
  if (lo == 0.0) return kCidFactorCap;
  return hi / lo;
}

void check_pair(std::span<const double> a, std::span<const double> b) {
  SF_REQUIRE(a.size() == b.size(),
             "cid: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  SF_REQUIRE(a.size() >= 2, "cid: inputs need at least 2 points");
}

// Squared Euclidean distance, abandoned once it exceeds `limit_sq`.
double squared_distance_bounded(std::span<const double> a, std::span<const double> b, double limit_sq) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
    if (s > limit_sq) return std::numeric_limits<double>::infinity();
  }
  return s;
}

}  // namespace

double cid(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b);
  return euclidean(a, b) * correction_factor(complexity_estimate(a), complexity_estimate(b));
}

double cid_with_ce(std::span<const double> window, std::span<const double> subseq, double subseq_ce) {
  check_pair(window, subseq);
  return euclidean(window, subseq) * correction_factor(complexity_estimate(window), subseq_ce);
}

DistanceProfile distance_profile(std::span<const double> series, std::span<const double> subseq, std::size_t first,
                                 std::size_t last) {
  const std::size_t l = subseq.size();
  SF_REQUIRE(l >= 2 && l <= series.size(), "distance_profile: subsequence length " + std::to_string(l) +
                                               " invalid for series of length " + std::to_string(series.size()));
  SF_REQUIRE(first <= last && last <= series.size() - l, "distance_profile: empty or out-of-range scan");
  const double ce = complexity_estimate(subseq);
  DistanceProfile p;
  for (std::size_t j = first; j <= last; ++j) {
    p.offsets.push_back(j);
    p.values.push_back(cid_with_ce(series.subspan(j, l), subseq, ce));
  }
  return p;
}

BestMatch best_match(std::span<const double> series, std::span<const double> subseq, std::size_t first,
                     std::size_t last) {
  const std::size_t l = subseq.size();
  SF_REQUIRE(l >= 2 && l <= series.size(), "best_match: subsequence length " + std::to_string(l) +
                                               " invalid for series of length " + std::to_string(series.size()));
  SF_REQUIRE(first <= last && last <= series.size() - l, "best_match: empty or out-of-range scan");
  const double ce = complexity_estimate(subseq);
  BestMatch best{first, std::numeric_limits<double>::infinity()};
  for (std::size_t j = first; j <= last; ++j) {
    auto window = series.subspan(j, l);
    // cid >= euclidean, so a window whose partial distance already exceeds the best cannot win.
    const double limit = std::isinf(best.distance) ? best.distance : best.distance * best.distance * (1.0 + 1e-12);
    const double sq = squared_distance_bounded(window, subseq, limit);
    if (std::isinf(sq)) continue;
    const double d = std::sqrt(sq) * correction_factor(complexity_estimate(window), ce);
    if (d < best.distance) best = {j, d};
  }
  return best;
}

double psd(std::span<const double> series, std::span<const double> subseq) {
  SF_REQUIRE(subseq.size() <= series.size(), "psd: subsequence longer than series");
  return best_match(series, subseq, 0, series.size() - subseq.size()).distance;
}

double psd_windowed(std::span<const double> series, std::span<const double> subseq, std::size_t anchor,
                    std::size_t window) {
  SF_REQUIRE(subseq.size() <= series.size(), "psd: subsequence longer than series");
  const std::size_t last_start = series.size() - subseq.size();
  const std::size_t lo = anchor > window ? anchor - window : 0;
  const std::size_t hi = std::min(last_start, anchor + window);
  SF_REQUIRE(lo <= hi, "psd_windowed: anchor beyond the last valid window start");
  return best_match(series, subseq, lo, hi).distance;
}

double reconstruction_distance(std::span<const double> series, std::span<const std::size_t> selected,
                               std::size_t candidate) {
  SF_REQUIRE(candidate < series.size(), "reconstruction_distance: candidate outside series");
  SF_REQUIRE(!selected.empty() && selected.front() < candidate && candidate < selected.back(),
             "reconstruction_distance: candidate not strictly bracketed by selected points");
  auto right_it = std::upper_bound(selected.begin(), selected.end(), candidate);
  SF_REQUIRE(*(right_it - 1) != candidate, "reconstruction_distance: candidate already selected");
  const double x1 = static_cast<double>(*(right_it - 1));
  const double x2 = static_cast<double>(*right_it);
  const double y1 = series[*(right_it - 1)];
  const double y2 = series[*right_it];
  const double x0 = static_cast<double>(candidate);
  const double y0 = series[candidate];
  const double dy = y2 - y1;
  const double dx = x2 - x1;
  return std::abs(dy * x0 - dx * y0 + x2 * y1 - y2 * x1) / std::sqrt(dy * dy + dx * dx);
}

double binary_entropy(std::size_t positives, std::size_t total) {
  if (total == 0 || positives == 0 || positives == total) return 0.0;
  const double p = static_cast<double>(positives) / static_cast<double>(total);
  return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

SplitScore information_gain(std::span<const double> distances, const std::vector<bool>& is_target,
                            GainCriterion criterion) {
  const std::size_t n = distances.size();
  SF_REQUIRE(n >= 2 && is_target.size() == n, "information_gain: need two or more labelled distances");
  const auto targets = static_cast<std::size_t>(std::count(is_target.begin(), is_target.end(), true));
  SF_REQUIRE(targets > 0 && targets < n, "information_gain: need at least one target and one non-target");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return distances[a] < distances[b]; });

  const double parent = binary_entropy(targets, n);
  double total_sum = 0.0;
  for (double d : distances) total_sum += d;

  SplitScore best{0.0, distances[order.front()]};
  double best_margin = -1.0;
  bool found = false;
  std::size_t left_targets = 0;
  double left_sum = 0.0;
  for (std::size_t i = 1; i < n; ++i) {
    left_targets += is_target[order[i - 1]] ? 1 : 0;
    left_sum += distances[order[i - 1]];
    const double lo = distances[order[i - 1]];
    const double hi = distances[order[i]];
    if (!(lo < hi)) continue;
    const double nl = static_cast<double>(i);
    const double nr = static_cast<double>(n - i);
    double gain = parent - (nl / static_cast<double>(n)) * binary_entropy(left_targets, i) -
                  (nr / static_cast<double>(n)) * binary_entropy(targets - left_targets, n - i);
    if (criterion == GainCriterion::gain_ratio) gain /= binary_entropy(i, n);
    const double margin = std::abs((total_sum - left_sum) / nr - left_sum / nl);
    const double threshold = std::midpoint(lo, hi);
    const bool better = !found || gain > best.gain + 1e-12 || (std::abs(gain - best.gain) <= 1e-12 && margin > best_margin);
    if (better) {
      best = {gain, threshold};
      best_margin = margin;
      found = true;
    }
  }
  return best;
}

}  // namespace shapeformer::metrics
