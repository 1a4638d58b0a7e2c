#include "shapeformer/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <set>
#include <tuple>

#include "shapeformer/digest.hpp"
#include "shapeformer/error.hpp"
#include "shapeformer/parallel.hpp"

namespace shapeformer {

using nlohmann::json;

std::size_t default_npip(std::size_t series_length, double ratio, std::size_t floor) {
  const auto n = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(series_length)));
  return std::min(series_length, std::max(n, floor));
}

std::vector<std::size_t> pip_insertion_order(std::span<const double> series, std::size_t npip) {
  const std::size_t T = series.size();
  SF_REQUIRE(T >= 2, "extract_pips: series needs at least 2 points");
  SF_REQUIRE(npip >= 2, "extract_pips: npip must be at least 2");
  if (npip > T) {
    warn("npip " + std::to_string(npip) + " exceeds series length " + std::to_string(T) + "; clipped");
    npip = T;
  }
  std::vector<std::size_t> order{0, T - 1};
  std::vector<std::size_t> selected{0, T - 1};
  std::vector<double> dist(T, -1.0);  // -1 marks selected points
  auto refresh = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t t = lo + 1; t < hi; ++t) dist[t] = metrics::reconstruction_distance(series, selected, t);
  };
  refresh(0, T - 1);
  while (order.size() < npip) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t t = 1; t + 1 < T; ++t)
      if (dist[t] > best_d) best_d = dist[t], best = t;
    auto pos = std::lower_bound(selected.begin(), selected.end(), best);
    const std::size_t left = *(pos - 1), right = *pos;
    selected.insert(pos, best);
    order.push_back(best);
    dist[best] = -1.0;
    refresh(left, best);
    refresh(best, right);
  }
  return order;
}

std::vector<std::size_t> extract_pips(std::span<const double> series, std::size_t npip) {
  auto order = pip_insertion_order(series, npip);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<Candidate> candidates_from_channel(std::span<const double> channel, std::size_t npip,
                                               std::size_t variable, std::size_t source_instance,
                                               std::size_t class_label) {
  const auto order = pip_insertion_order(channel, npip);
  std::vector<std::size_t> pips{order[0], order[1]};
  std::vector<Candidate> out;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t k = 2; k < order.size(); ++k) {
    const std::size_t p = order[k];
    auto pos = pips.insert(std::lower_bound(pips.begin(), pips.end(), p), p);
    const auto idx = static_cast<std::size_t>(pos - pips.begin());
    // The new point can be the left, middle, or right member of a triple of consecutive PIPs.
    for (std::size_t z = 0; z <= 2; ++z) {
      if (idx < z || idx + 2 - z >= pips.size()) continue;
      const std::size_t first = pips[idx - z];
      const std::size_t last = pips[idx + 2 - z];
      const std::size_t end = last + 1;
      if (end - first < 3) continue;
      if (!seen.emplace(first, end).second) continue;
      Candidate c;
      c.values.assign(channel.begin() + static_cast<std::ptrdiff_t>(first),
                      channel.begin() + static_cast<std::ptrdiff_t>(end));
      c.variable = variable;
      c.start = first;
      c.end = end;
      c.class_label = class_label;
      c.source_instance = source_instance;
      out.push_back(std::move(c));
    }
  }
  return out;
}

std::vector<Candidate> extract_candidates(const Dataset& dataset, std::size_t npip) {
  SF_REQUIRE(!dataset.instances.empty(), "extract_candidates: empty dataset");
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& inst = dataset.instances[i];
    for (std::size_t v = 0; v < inst.series.num_variables(); ++v) {
      auto c = candidates_from_channel(inst.series.channel(v), npip, v, i, inst.label);
      out.insert(out.end(), std::make_move_iterator(c.begin()), std::make_move_iterator(c.end()));
    }
  }
  return out;
}

std::vector<double> candidate_distances(const Candidate& candidate, const Dataset& dataset,
                                        std::optional<std::size_t> window) {
  std::vector<double> d;
  d.reserve(dataset.size());
  for (const auto& inst : dataset.instances) {
    auto ch = inst.series.channel(candidate.variable);
    d.push_back(window ? metrics::psd_windowed(ch, candidate.values, candidate.start, *window)
                       : metrics::psd(ch, candidate.values));
  }
  return d;
}

void score_candidates(std::vector<Candidate>& candidates, const Dataset& dataset, const DiscoveryConfig& config) {
  SF_REQUIRE(dataset.classes.size() >= 2, "shapelet scoring needs at least two classes");
  parallel_for(candidates.size(), config.threads, [&](std::size_t i) {
    auto& c = candidates[i];
    const auto d = candidate_distances(c, dataset, config.window);
    std::vector<bool> target(dataset.size());
    for (std::size_t k = 0; k < dataset.size(); ++k) target[k] = dataset.instances[k].label == c.class_label;
    const auto s = metrics::information_gain(d, target, config.criterion);
    c.gain = s.gain;
    c.threshold = s.threshold;
  });
}

bool ranks_before(const Shapelet& a, const Shapelet& b) {
  if (a.gain != b.gain) return a.gain > b.gain;
  const auto la = a.length(), lb = b.length();
  return std::tie(la, a.start, a.source_instance, a.variable, a.class_label) <
         std::tie(lb, b.start, b.source_instance, b.variable, b.class_label);
}

ShapeletPool select_top(std::vector<Candidate> scored, const Dataset& dataset, const DiscoveryConfig& config,
                        std::size_t npip) {
  SF_REQUIRE(config.per_class >= 1, "per-class shapelet count must be at least 1");
  const std::size_t C = dataset.classes.size();
  std::vector<std::vector<Candidate>> by_class(C);
  for (auto& c : scored) by_class.at(c.class_label).push_back(std::move(c));

  ShapeletPool pool;
  pool.classes = dataset.classes;
  pool.num_variables = dataset.num_variables;
  pool.series_length = dataset.series_length;
  pool.per_class_count = config.per_class;
  pool.npip = npip;
  pool.config = config;
  pool.candidate_counts.resize(C);
  pool.selected_counts.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    auto& list = by_class[c];
    pool.candidate_counts[c] = list.size();
    const std::size_t keep = std::min(config.per_class, list.size());
    std::partial_sort(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(keep), list.end(), ranks_before);
    pool.selected_counts[c] = keep;
    if (keep < config.per_class)
      warn("class '" + dataset.classes[c] + "' has only " + std::to_string(list.size()) + " candidates; " +
           std::to_string(config.per_class) + " requested");
    pool.shapelets.insert(pool.shapelets.end(), std::make_move_iterator(list.begin()),
                          std::make_move_iterator(list.begin() + static_cast<std::ptrdiff_t>(keep)));
  }
  std::sort(pool.shapelets.begin(), pool.shapelets.end(), ranks_before);
  return pool;
}

ShapeletPool select_shapelets(std::vector<Candidate> candidates, const Dataset& dataset, const DiscoveryConfig& config,
                              std::size_t npip) {
  score_candidates(candidates, dataset, config);
  return select_top(std::move(candidates), dataset, config, npip);
}

DiscoveryResult discover(const Dataset& dataset, const DiscoveryConfig& config) {
  dataset.validate();
  const std::size_t npip = default_npip(dataset.series_length, config.npip_ratio, config.min_npip);
  auto candidates = extract_candidates(dataset, npip);
  score_candidates(candidates, dataset, config);
  DiscoveryResult result;
  result.total_candidates = candidates.size();
  result.candidate_gains.reserve(candidates.size());
  for (const auto& c : candidates) result.candidate_gains.push_back(c.gain);
  result.pool = select_top(std::move(candidates), dataset, config, npip);
  return result;
}

// ---------------------------------------------------------------------------
// Pool file

namespace {

std::string criterion_name(metrics::GainCriterion c) {
  return c == metrics::GainCriterion::gain_ratio ? "gain_ratio" : "information_gain";
}

metrics::GainCriterion criterion_from(const std::string& s) {
  if (s == "gain_ratio") return metrics::GainCriterion::gain_ratio;
  if (s == "information_gain") return metrics::GainCriterion::information_gain;
  throw ParseError("unknown gain criterion '" + s + "'");
}

}  // namespace

std::string pool_to_text(const ShapeletPool& pool) {
  json j;
  j["format"] = "shapeformer-pool";
  j["version"] = kPoolFormatVersion;
  j["classes"] = pool.classes;
  j["num_variables"] = pool.num_variables;
  j["series_length"] = pool.series_length;
  j["per_class_count"] = pool.per_class_count;
  j["discovery_config"] = {{"npip_ratio", pool.config.npip_ratio},
                           {"min_npip", pool.config.min_npip},
                           {"npip", pool.npip},
                           {"per_class", pool.config.per_class},
                           {"window", pool.config.window ? json(*pool.config.window) : json(nullptr)},
                           {"criterion", criterion_name(pool.config.criterion)}};
  j["candidate_counts"] = pool.candidate_counts;
  j["selected_counts"] = pool.selected_counts;
  json list = json::array();
  for (const auto& s : pool.shapelets) {
    list.push_back({{"values", s.values},
                    {"variable", s.variable},
                    {"start", s.start},
                    {"end", s.end},
                    {"class", pool.classes.at(s.class_label)},
                    {"gain", s.gain},
                    {"threshold", s.threshold},
                    {"source", s.source_instance}});
  }
  j["shapelets"] = std::move(list);
  return j.dump(1) + "\n";
}

ShapeletPool pool_from_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("pool file is not valid JSON: ") + e.what());
  }
  try {
    if (j.value("format", std::string()) != "shapeformer-pool") throw ParseError("not a shapelet pool file");
    const int version = j.at("version").get<int>();
    if (version != kPoolFormatVersion)
      throw ArtifactMismatch("pool format version mismatch: expected " + std::to_string(kPoolFormatVersion) +
                             ", found " + std::to_string(version));
    ShapeletPool pool;
    pool.classes = j.at("classes").get<std::vector<std::string>>();
    pool.num_variables = j.at("num_variables").get<std::size_t>();
    pool.series_length = j.at("series_length").get<std::size_t>();
    pool.per_class_count = j.at("per_class_count").get<std::size_t>();
    const auto& dc = j.at("discovery_config");
    pool.config.npip_ratio = dc.at("npip_ratio").get<double>();
    pool.config.min_npip = dc.at("min_npip").get<std::size_t>();
    pool.config.per_class = dc.at("per_class").get<std::size_t>();
    if (!dc.at("window").is_null()) pool.config.window = dc.at("window").get<std::size_t>();
    pool.config.criterion = criterion_from(dc.at("criterion").get<std::string>());
    pool.npip = dc.at("npip").get<std::size_t>();
    pool.candidate_counts = j.at("candidate_counts").get<std::vector<std::size_t>>();
    pool.selected_counts = j.at("selected_counts").get<std::vector<std::size_t>>();
    for (const auto& r : j.at("shapelets")) {
      Shapelet s;
      s.values = r.at("values").get<std::vector<double>>();
      s.variable = r.at("variable").get<std::size_t>();
      s.start = r.at("start").get<std::size_t>();
      s.end = r.at("end").get<std::size_t>();
      const auto cls = r.at("class").get<std::string>();
      auto it = std::find(pool.classes.begin(), pool.classes.end(), cls);
      if (it == pool.classes.end()) throw ContractViolation("pool shapelet has unknown class '" + cls + "'");
      s.class_label = static_cast<std::size_t>(it - pool.classes.begin());
      s.gain = r.at("gain").get<double>();
      s.threshold = r.at("threshold").get<double>();
      s.source_instance = r.at("source").get<std::size_t>();
      if (!(s.start < s.end)) throw ContractViolation("pool shapelet violates start < end");
      if (s.end > pool.series_length) throw ContractViolation("pool shapelet ends beyond series length");
      if (s.values.size() != s.end - s.start) throw ContractViolation("pool shapelet length disagrees with its span");
      if (s.values.size() < 2) throw ContractViolation("pool shapelet shorter than 2 points");
      if (s.variable >= pool.num_variables) throw ContractViolation("pool shapelet variable out of range");
      if (!pool.shapelets.empty() && s.gain > pool.shapelets.back().gain)
        throw ContractViolation("pool shapelets are not sorted by gain");
      pool.shapelets.push_back(std::move(s));
    }
    return pool;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed pool file: ") + e.what());
  }
}

void save_pool(const ShapeletPool& pool, const std::filesystem::path& path) {
  write_file_atomic(path, pool_to_text(pool));
}

ShapeletPool load_pool(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("no such pool file: " + path.string());
  return pool_from_text(read_text_file(path));
}

std::string pool_digest(const ShapeletPool& pool) { return sha256_hex(pool_to_text(pool)); }

}  // namespace shapeformer
