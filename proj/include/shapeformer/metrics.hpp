#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace shapeformer::metrics {

/// Correction factor used when exactly one of the two complexity estimates is zero.
inline constexpr double kCidFactorCap = 1e6;

/// sqrt(sum (x[i+1] - x[i])^2)
double complexity_estimate(std::span<const double> x);

double euclidean(std::span<const double> a, std::span<const double> b);

/// Complexity-invariant distance: Euclidean distance scaled by
/// max(CE(a), CE(b)) / min(CE(a), CE(b)). Two flat inputs use factor 1;
/// one flat input uses kCidFactorCap.
double cid(std::span<const double> a, std::span<const double> b);

/// Same as cid() with the subsequence's complexity estimate precomputed.
double cid_with_ce(std::span<const double> window, std::span<const double> subseq, double subseq_ce);

struct DistanceProfile {
  std::vector<double> values;
  std::vector<std::size_t> offsets;
};

/// CID of `subseq` against every window whose start lies in [first, last].
DistanceProfile distance_profile(std::span<const double> series, std::span<const double> subseq, std::size_t first,
                                 std::size_t last);

struct BestMatch {
  std::size_t offset = 0;
  double distance = 0.0;
};

/// Minimum-CID window with start in [first, last]; the smallest offset wins ties.
BestMatch best_match(std::span<const double> series, std::span<const double> subseq, std::size_t first,
                     std::size_t last);

/// Perceptual subsequence distance: minimum CID over all T - l + 1 windows.
double psd(std::span<const double> series, std::span<const double> subseq);

/// PSD restricted to window starts within `window` of `anchor`.
double psd_windowed(std::span<const double> series, std::span<const double> subseq, std::size_t anchor,
                    std::size_t window);

/// Perpendicular distance from (candidate, series[candidate]) to the line
/// through the nearest selected points on either side. `selected` is sorted.
double reconstruction_distance(std::span<const double> series, std::span<const std::size_t> selected,
                               std::size_t candidate);

/// Binary entropy in bits of a split with `positives` out of `total`.
double binary_entropy(std::size_t positives, std::size_t total);

struct SplitScore {
  double gain = 0.0;
  double threshold = 0.0;
};

enum class GainCriterion { information_gain, gain_ratio };

/// Best one-vs-rest split of `distances` by a threshold placed at midpoints of
/// consecutive distinct sorted values. Equal gains prefer the larger gap
/// between the two sides' mean distances, then the smaller threshold.
SplitScore information_gain(std::span<const double> distances, const std::vector<bool>& is_target,
                            GainCriterion criterion = GainCriterion::information_gain);

}  // namespace shapeformer::metrics
