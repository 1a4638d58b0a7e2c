#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace shapeformer {

/// One multivariate series: V channels of T samples, stored channel-major.
class TimeSeries {
 public:
  TimeSeries() = default;
  TimeSeries(std::string id, std::size_t num_variables, std::size_t length, std::vector<double> values);

  const std::string& id() const noexcept { return id_; }
  std::size_t num_variables() const noexcept { return num_variables_; }
  std::size_t length() const noexcept { return length_; }

  std::span<const double> channel(std::size_t v) const;
  std::span<double> channel(std::size_t v);
  std::span<const double> values() const noexcept { return values_; }

  double at(std::size_t v, std::size_t t) const { return values_[v * length_ + t]; }

 private:
  std::string id_;
  std::size_t num_variables_ = 0;
  std::size_t length_ = 0;
  std::vector<double> values_;
};

/// Where a dataset came from; training code refuses to touch `test` data.
enum class SplitTag { unspecified, train, validation, test };

struct Instance {
  TimeSeries series;
  std::size_t label = 0;
};

struct Dataset {
  std::string name;
  std::vector<Instance> instances;
  std::vector<std::string> classes;
  std::size_t num_variables = 0;
  std::size_t series_length = 0;
  SplitTag split = SplitTag::unspecified;

  std::size_t size() const noexcept { return instances.size(); }
  std::vector<std::size_t> class_counts() const;
  /// Throws ContractViolation when instances disagree with the declared shape or vocabulary.
  void validate() const;
};

enum class FileFormat { ts, csv };

/// Reads a UEA `.ts` file. Unequal-length channels are right-padded with
/// their last observed value; missing values (`?`, `NaN`) are linearly
/// interpolated within a channel.
Dataset parse_ts_file(const std::filesystem::path& path);
Dataset parse_ts_text(const std::string& text, const std::string& source_name = "<memory>");

/// Wide CSV: header `id,variable,label,t0,t1,...`, one row per (instance, variable).
Dataset parse_csv_file(const std::filesystem::path& path);
Dataset parse_csv_text(const std::string& text, const std::string& source_name = "<memory>");

Dataset load_dataset(const std::filesystem::path& path, FileFormat format = FileFormat::ts);

/// Writes a `.ts` file whose values round-trip exactly through parse_ts_file.
void write_ts_file(const Dataset& dataset, const std::filesystem::path& path);
std::string write_ts_text(const Dataset& dataset);

/// Fills NaN entries in place: interior gaps linearly, edges by nearest observed value.
/// An all-missing channel becomes zeros.
void impute_missing(std::span<double> channel);

/// Right-pads every channel of every instance to `length` with its last value.
void pad_to_length(Dataset& dataset, std::size_t length);

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;  ///< 0 marks a constant channel (centered only)
};

/// Per-variable z-score. Fresh stats are computed from `dataset` when none are given.
std::pair<Dataset, NormalizationStats> normalize(const Dataset& dataset,
                                                 const std::optional<NormalizationStats>& stats = std::nullopt);

/// Stratified random split; `fraction` of each class goes to the first part.
/// Singleton classes stay entirely in the first part (a warning is emitted).
std::pair<Dataset, Dataset> split_train_val(const Dataset& dataset, double fraction, std::uint64_t seed);

/// Subset in the given index order, keeping vocabulary and shape.
Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices);

}  // namespace shapeformer
