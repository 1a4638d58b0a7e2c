#include "shapeformer/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "shapeformer/error.hpp"

namespace shapeformer {

TimeSeries::TimeSeries(std::string id, std::size_t num_variables, std::size_t length, std::vector<double> values)
    : id_(std::move(id)), num_variables_(num_variables), length_(length), values_(std::move(values)) {
  SF_REQUIRE(values_.size() == num_variables_ * length_,
             "TimeSeries " + id_ + ": value count " + std::to_string(values_.size()) + " != V*T = " +
                 std::to_string(num_variables_ * length_));
}

std::span<const double> TimeSeries::channel(std::size_t v) const {
  SF_REQUIRE(v < num_variables_, "variable index out of range");
  return std::span<const double>(values_).subspan(v * length_, length_);
}

std::span<double> TimeSeries::channel(std::size_t v) {
  SF_REQUIRE(v < num_variables_, "variable index out of range");
  return std::span<double>(values_).subspan(v * length_, length_);
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(classes.size(), 0);
  for (const auto& inst : instances) ++counts.at(inst.label);
  return counts;
}

void Dataset::validate() const {
  for (const auto& inst : instances) {
    SF_REQUIRE(inst.label < classes.size(), "instance " + inst.series.id() + " has label outside vocabulary");
    SF_REQUIRE(inst.series.num_variables() == num_variables,
               "instance " + inst.series.id() + " has " + std::to_string(inst.series.num_variables()) +
                   " variables, dataset declares " + std::to_string(num_variables));
    SF_REQUIRE(inst.series.length() == series_length,
               "instance " + inst.series.id() + " has length " + std::to_string(inst.series.length()) +
                   ", dataset declares " + std::to_string(series_length));
  }
}

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

double parse_value(const std::string& raw, std::size_t line) {
  std::string tok = trim(raw);
  if (tok.empty() || tok == "?" || lower(tok) == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) throw ParseError("invalid numeric value '" + tok + "'", line);
  return v;
}

bool parse_bool(const std::string& tok, std::size_t line) {
  auto t = lower(tok);
  if (t == "true") return true;
  if (t == "false") return false;
  throw ParseError("expected true/false, found '" + tok + "'", line);
}

std::size_t parse_count(const std::string& tok, std::size_t line) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) throw ParseError("invalid count '" + tok + "'", line);
  return v;
}

struct RawInstance {
  std::vector<std::vector<double>> channels;
  std::string label;
  std::size_t line = 0;
};

// Shared tail of both parsers: impute, pad to the longest channel, build the dataset.
Dataset assemble(std::string name, std::vector<std::string> classes, std::vector<RawInstance> raw,
                 std::size_t num_variables) {
  Dataset ds;
  ds.name = std::move(name);
  ds.classes = std::move(classes);
  ds.num_variables = num_variables;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ds.classes.size(); ++i) index.emplace(ds.classes[i], i);

  std::size_t max_len = 0;
  for (const auto& r : raw)
    for (const auto& ch : r.channels) max_len = std::max(max_len, ch.size());
  ds.series_length = max_len;

  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto& r = raw[i];
    auto it = index.find(r.label);
    if (it == index.end())
      throw DataError("unknown class label '" + r.label + "' at line " + std::to_string(r.line));
    std::vector<double> values;
    values.reserve(num_variables * max_len);
    for (auto& ch : r.channels) {
      if (ch.empty()) throw ParseError("empty channel", r.line);
      impute_missing(ch);
      const double last = ch.back();
      values.insert(values.end(), ch.begin(), ch.end());
      values.insert(values.end(), max_len - ch.size(), last);
    }
    ds.instances.push_back({TimeSeries(std::to_string(i), num_variables, max_len, std::move(values)), it->second});
  }
  return ds;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void impute_missing(std::span<double> channel) {
  const std::size_t n = channel.size();
  std::vector<std::size_t> observed;
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isnan(channel[i])) observed.push_back(i);
  if (observed.empty()) {
    std::fill(channel.begin(), channel.end(), 0.0);
    return;
  }
  for (std::size_t i = 0; i < observed.front(); ++i) channel[i] = channel[observed.front()];
  for (std::size_t i = observed.back() + 1; i < n; ++i) channel[i] = channel[observed.back()];
  for (std::size_t k = 0; k + 1 < observed.size(); ++k) {
    const std::size_t a = observed[k], b = observed[k + 1];
    for (std::size_t i = a + 1; i < b; ++i) {
      const double t = static_cast<double>(i - a) / static_cast<double>(b - a);
      channel[i] = channel[a] + t * (channel[b] - channel[a]);
    }
  }
}

Dataset parse_ts_text(const std::string& text, const std::string& source_name) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::string problem_name = source_name;
  std::optional<std::size_t> dimensions;
  std::optional<bool> univariate;
  std::optional<std::size_t> declared_length;
  bool equal_length = false;
  std::optional<std::vector<std::string>> classes;
  bool in_data = false;
  std::vector<RawInstance> raw;
  std::size_t num_variables = 0;

  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == '%') continue;
    if (!in_data) {
      if (t[0] != '@') throw ParseError("expected metadata line starting with '@'", line_no);
      auto toks = split_ws(t);
      const std::string key = lower(toks[0]);
      auto need = [&](std::size_t n) {
        if (toks.size() < n) throw ParseError("metadata " + toks[0] + " is missing its value", line_no);
      };
      if (key == "@problemname") {
        need(2);
        problem_name = toks[1];
      } else if (key == "@timestamps") {
        need(2);
        if (parse_bool(toks[1], line_no)) throw ParseError("timestamped series are not supported", line_no);
      } else if (key == "@missing") {
        need(2);
        parse_bool(toks[1], line_no);
      } else if (key == "@univariate") {
        need(2);
        univariate = parse_bool(toks[1], line_no);
      } else if (key == "@dimensions" || key == "@dimension") {
        need(2);
        dimensions = parse_count(toks[1], line_no);
        if (*dimensions == 0) throw ParseError("@dimensions must be positive", line_no);
      } else if (key == "@equallength") {
        need(2);
        equal_length = parse_bool(toks[1], line_no);
      } else if (key == "@serieslength") {
        need(2);
        declared_length = parse_count(toks[1], line_no);
      } else if (key == "@classlabel") {
        need(2);
        if (!parse_bool(toks[1], line_no)) throw ParseError("@classLabel false: unlabeled data is not supported", line_no);
        if (toks.size() < 3) throw ParseError("@classLabel true declares no labels", line_no);
        classes = std::vector<std::string>(toks.begin() + 2, toks.end());
      } else if (key == "@targetlabel") {
        throw ParseError("regression targets are not supported", line_no);
      } else if (key == "@data") {
        if (!classes) throw ParseError("@data reached before @classLabel declaration", line_no);
        in_data = true;
        num_variables = dimensions.value_or(univariate.value_or(false) ? 1 : 0);
      } else {
        throw ParseError("unknown metadata key " + toks[0], line_no);
      }
      continue;
    }

    auto parts = split(t, ':');
    if (parts.size() < 2) throw ParseError("data line has no class label", line_no);
    RawInstance r;
    r.line = line_no;
    r.label = trim(parts.back());
    const std::size_t dims = parts.size() - 1;
    if (num_variables == 0) num_variables = dims;
    if (dims != num_variables)
      throw ParseError("instance has " + std::to_string(dims) + " dimensions, expected " + std::to_string(num_variables),
                       line_no);
    for (std::size_t d = 0; d < dims; ++d) {
      std::vector<double> ch;
      for (const auto& tok : split(parts[d], ',')) ch.push_back(parse_value(tok, line_no));
      r.channels.push_back(std::move(ch));
    }
    raw.push_back(std::move(r));
  }
  if (!in_data) throw ParseError("missing @data section", line_no);
  if (raw.empty()) throw DataError("no instances in " + source_name);

  Dataset ds = assemble(problem_name, *classes, std::move(raw), num_variables);
  if (equal_length && declared_length && *declared_length != ds.series_length)
    throw DataError("@seriesLength " + std::to_string(*declared_length) + " disagrees with data length " +
                    std::to_string(ds.series_length));
  return ds;
}

Dataset parse_ts_file(const std::filesystem::path& path) {
  return parse_ts_text(read_file(path), path.stem().string());
}

Dataset parse_csv_text(const std::string& text, const std::string& source_name) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<std::string> classes;
  std::vector<RawInstance> raw;
  std::map<std::string, std::size_t> by_id;
  std::size_t num_variables = 0;

  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty()) continue;
    auto cols = split(t, ',');
    if (!header_seen) {
      if (cols.size() < 4 || lower(trim(cols[0])) != "id" || lower(trim(cols[1])) != "variable" ||
          lower(trim(cols[2])) != "label")
        throw ParseError("CSV header must start with id,variable,label followed by time columns", line_no);
      header_seen = true;
      continue;
    }
    if (cols.size() < 4) throw ParseError("CSV row has no values", line_no);
    const std::string id = trim(cols[0]);
    const std::size_t var = parse_count(trim(cols[1]), line_no);
    const std::string label = trim(cols[2]);
    if (std::find(classes.begin(), classes.end(), label) == classes.end()) classes.push_back(label);

    auto [it, inserted] = by_id.emplace(id, raw.size());
    if (inserted) {
      raw.push_back({});
      raw.back().label = label;
      raw.back().line = line_no;
    }
    auto& r = raw[it->second];
    if (r.label != label) throw DataError("instance " + id + " has conflicting labels at line " + std::to_string(line_no));
    if (var != r.channels.size())
      throw ParseError("instance " + id + ": expected variable " + std::to_string(r.channels.size()), line_no);
    std::vector<double> ch;
    for (std::size_t c = 3; c < cols.size(); ++c) ch.push_back(parse_value(cols[c], line_no));
    while (!ch.empty() && std::isnan(ch.back())) ch.pop_back();  // ragged rows end in empty cells
    r.channels.push_back(std::move(ch));
  }
  if (!header_seen) throw ParseError("empty CSV input", line_no);
  if (raw.empty()) throw DataError("no instances in " + source_name);
  num_variables = raw.front().channels.size();
  for (const auto& r : raw)
    if (r.channels.size() != num_variables)
      throw DataError("instance at line " + std::to_string(r.line) + " has " + std::to_string(r.channels.size()) +
                      " variables, expected " + std::to_string(num_variables));
  return assemble(source_name, std::move(classes), std::move(raw), num_variables);
}

Dataset parse_csv_file(const std::filesystem::path& path) {
  return parse_csv_text(read_file(path), path.stem().string());
}

Dataset load_dataset(const std::filesystem::path& path, FileFormat format) {
  if (!std::filesystem::exists(path)) throw InputError("no such file: " + path.string());
  return format == FileFormat::csv ? parse_csv_file(path) : parse_ts_file(path);
}

std::string write_ts_text(const Dataset& dataset) {
  std::ostringstream out;
  out << "@problemName " << (dataset.name.empty() ? "unnamed" : dataset.name) << '\n'
      << "@timeStamps false\n@missing false\n"
      << "@univariate " << (dataset.num_variables == 1 ? "true" : "false") << '\n'
      << "@dimensions " << dataset.num_variables << '\n'
      << "@equalLength true\n@seriesLength " << dataset.series_length << '\n'
      << "@classLabel true";
  for (const auto& c : dataset.classes) out << ' ' << c;
  out << "\n@data\n";
  out << std::setprecision(17);
  for (const auto& inst : dataset.instances) {
    for (std::size_t v = 0; v < inst.series.num_variables(); ++v) {
      auto ch = inst.series.channel(v);
      for (std::size_t t = 0; t < ch.size(); ++t) out << (t ? "," : "") << ch[t];
      out << ':';
    }
    out << dataset.classes.at(inst.label) << '\n';
  }
  return out.str();
}

void write_ts_file(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << write_ts_text(dataset);
}

void pad_to_length(Dataset& dataset, std::size_t length) {
  SF_REQUIRE(length >= dataset.series_length, "cannot pad dataset of length " + std::to_string(dataset.series_length) +
                                                  " down to " + std::to_string(length));
  if (length == dataset.series_length) return;
  for (auto& inst : dataset.instances) {
    const auto& s = inst.series;
    std::vector<double> values;
    values.reserve(s.num_variables() * length);
    for (std::size_t v = 0; v < s.num_variables(); ++v) {
      auto ch = s.channel(v);
      values.insert(values.end(), ch.begin(), ch.end());
      values.insert(values.end(), length - ch.size(), ch.back());
    }
    inst.series = TimeSeries(s.id(), s.num_variables(), length, std::move(values));
  }
  dataset.series_length = length;
}

std::pair<Dataset, NormalizationStats> normalize(const Dataset& dataset, const std::optional<NormalizationStats>& stats) {
  const std::size_t V = dataset.num_variables;
  NormalizationStats used;
  if (stats) {
    SF_REQUIRE(stats->mean.size() == V && stats->stddev.size() == V,
               "normalization stats cover " + std::to_string(stats->mean.size()) + " variables, dataset has " +
                   std::to_string(V));
    used = *stats;
  } else {
    used.mean.assign(V, 0.0);
    used.stddev.assign(V, 0.0);
    for (std::size_t v = 0; v < V; ++v) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& inst : dataset.instances)
        for (double x : inst.series.channel(v)) sum += x, ++n;
      const double mean = n ? sum / static_cast<double>(n) : 0.0;
      double sq = 0.0;
      for (const auto& inst : dataset.instances)
        for (double x : inst.series.channel(v)) sq += (x - mean) * (x - mean);
      used.mean[v] = mean;
      used.stddev[v] = n ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
      // Channels whose spread is pure rounding noise are treated as constant.
      if (used.stddev[v] <= 1e-12 * std::max(1.0, std::abs(mean))) used.stddev[v] = 0.0;
    }
  }
  Dataset out = dataset;
  for (auto& inst : out.instances)
    for (std::size_t v = 0; v < V; ++v)
      for (double& x : inst.series.channel(v)) {
        x -= used.mean[v];
        if (used.stddev[v] > 0.0) x /= used.stddev[v];
      }
  return {std::move(out), std::move(used)};
}

Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices) {
  Dataset out;
  out.name = dataset.name;
  out.classes = dataset.classes;
  out.num_variables = dataset.num_variables;
  out.series_length = dataset.series_length;
  out.split = dataset.split;
  out.instances.reserve(indices.size());
  for (auto i : indices) out.instances.push_back(dataset.instances.at(i));
  return out;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& dataset, double fraction, std::uint64_t seed) {
  SF_REQUIRE(fraction > 0.0 && fraction < 1.0, "split fraction must lie in (0, 1)");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_class(dataset.classes.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class.at(dataset.instances[i].label).push_back(i);

  std::vector<std::size_t> first, second;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    std::shuffle(members.begin(), members.end(), rng);
    std::size_t n_first = members.size();
    if (members.size() == 1) {
      warn("class '" + dataset.classes[c] + "' has a single instance; it stays in the training partition");
    } else {
      const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
      n_first = std::clamp<std::size_t>(target, 1, members.size() - 1);
    }
    first.insert(first.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_first));
    second.insert(second.end(), members.begin() + static_cast<std::ptrdiff_t>(n_first), members.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  Dataset a = subset(dataset, first);
  Dataset b = subset(dataset, second);
  a.split = SplitTag::train;
  b.split = SplitTag::validation;
  return {std::move(a), std::move(b)};
}

}  // namespace shapeformer
