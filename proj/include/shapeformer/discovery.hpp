#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shapeformer/data_io.hpp"
#include "shapeformer/metrics.hpp"

namespace shapeformer {

/// Shapelet span is half-open: values == channel[start, end).
struct Shapelet {
  std::vector<double> values;
  std::size_t variable = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t class_label = 0;
  double gain = 0.0;
  double threshold = 0.0;
  std::size_t source_instance = 0;

  std::size_t length() const noexcept { return end - start; }
  bool operator==(const Shapelet&) const = default;
};

using Candidate = Shapelet;  // gain/threshold unset until scored

struct DiscoveryConfig {
  double npip_ratio = 0.2;
  std::size_t min_npip = 3;
  std::size_t per_class = 10;
  /// Restricts the PSD scan to starts within this distance of the candidate's
  /// own start. Unset means a full scan.
  std::optional<std::size_t> window;
  metrics::GainCriterion criterion = metrics::GainCriterion::information_gain;
  /// 0 = hardware concurrency
  std::size_t threads = 0;

  bool operator==(const DiscoveryConfig&) const = default;
};

struct ShapeletPool {
  std::vector<Shapelet> shapelets;  ///< sorted by gain, descending
  std::vector<std::string> classes;
  std::size_t num_variables = 0;
  std::size_t series_length = 0;
  std::size_t per_class_count = 0;
  std::size_t npip = 0;
  DiscoveryConfig config;
  std::vector<std::size_t> candidate_counts;  ///< per class
  std::vector<std::size_t> selected_counts;   ///< per class; below per_class_count when candidates ran out

  std::size_t size() const noexcept { return shapelets.size(); }
  bool operator==(const ShapeletPool&) const = default;
};

/// round(ratio * T), at least `floor`, at most T.
std::size_t default_npip(std::size_t series_length, double ratio = 0.2, std::size_t floor = 3);

/// PIP indices in the order they were selected: first index, last index, then
/// greedily the maximum reconstruction distance (smallest index on ties).
std::vector<std::size_t> pip_insertion_order(std::span<const double> series, std::size_t npip);

/// Sorted PIP indices. npip > T is clipped to T with a warning.
std::vector<std::size_t> extract_pips(std::span<const double> series, std::size_t npip);

/// Candidates from PIP triples of one channel, in generation order.
std::vector<Candidate> candidates_from_channel(std::span<const double> channel, std::size_t npip,
                                               std::size_t variable, std::size_t source_instance,
                                               std::size_t class_label);

std::vector<Candidate> extract_candidates(const Dataset& dataset, std::size_t npip);

/// Distances of one candidate to every instance (same variable) in dataset order.
std::vector<double> candidate_distances(const Candidate& candidate, const Dataset& dataset,
                                        std::optional<std::size_t> window = std::nullopt);

/// Fills gain/threshold on each candidate (one-vs-rest for its own class).
void score_candidates(std::vector<Candidate>& candidates, const Dataset& dataset, const DiscoveryConfig& config);

/// Total order used for ranking: gain desc, length asc, start asc, then source and variable.
bool ranks_before(const Shapelet& a, const Shapelet& b);

/// Top `config.per_class` scored candidates per class, merged and sorted by gain.
ShapeletPool select_top(std::vector<Candidate> scored, const Dataset& dataset, const DiscoveryConfig& config,
                        std::size_t npip);

/// Scores and selects in one step.
ShapeletPool select_shapelets(std::vector<Candidate> candidates, const Dataset& dataset, const DiscoveryConfig& config,
                              std::size_t npip);

struct DiscoveryResult {
  ShapeletPool pool;
  std::size_t total_candidates = 0;
  std::vector<double> candidate_gains;  ///< every scored candidate, generation order
};

/// Full offline discovery: PIP candidates, PSD scoring, per-class selection.
DiscoveryResult discover(const Dataset& dataset, const DiscoveryConfig& config);

inline constexpr int kPoolFormatVersion = 1;

std::string pool_to_text(const ShapeletPool& pool);
ShapeletPool pool_from_text(const std::string& text);
void save_pool(const ShapeletPool& pool, const std::filesystem::path& path);
ShapeletPool load_pool(const std::filesystem::path& path);

/// SHA-256 of the serialized pool.
std::string pool_digest(const ShapeletPool& pool);

}  // namespace shapeformer
