#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shapeformer/autodiff.hpp"
#include "shapeformer/data_io.hpp"
#include "shapeformer/discovery.hpp"
#include "shapeformer/model.hpp"

namespace shapeformer {

/// split: train on part of the training set and keep the best epoch by
/// validation accuracy. full: train on all of it and keep the last epoch.
enum class Protocol { split, full };

std::string to_string(Protocol p);
Protocol protocol_from(const std::string& s);

inline constexpr std::size_t kTuningWindows[] = {10, 20, 50, 100, 200};
inline constexpr std::size_t kTuningShapeletCounts[] = {1, 3, 10, 30, 100};

struct TrainConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 5e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 200;
  std::size_t heads = 16;
  std::size_t d_spe = 128;
  std::size_t d_gen = 32;
  double dropout = 0.4;
  double npip_ratio = 0.2;
  std::size_t window = 100;
  std::size_t shapelets_per_class = 10;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  ClassTokenPolicy class_token = ClassTokenPolicy::first;
  PositionSource position_source = PositionSource::shapelet;
  Protocol protocol = Protocol::split;
  /// 0 = hardware concurrency
  std::size_t threads = 0;

  /// Throws ContractViolation on a non-positive count or an out-of-range rate.
  void validate() const;

  ModelConfig model_config(const ShapeletPool& pool) const;
  /// Full-scan PSD; the window only restricts the model's best-fit search.
  DiscoveryConfig discovery_config() const;

  bool operator==(const TrainConfig&) const = default;
};

/// Flat key/value object; every field is present.
nlohmann::json to_json(const TrainConfig& config);
/// Keys missing from `j` keep the values of `base`; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {});
TrainConfig load_train_config(const std::filesystem::path& path, const TrainConfig& base = {});

struct EpochRecord {
  std::size_t epoch = 0;  ///< 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_accuracy;
  bool operator==(const EpochRecord&) const = default;
};

struct RunReport {
  std::vector<EpochRecord> epochs;
  std::size_t selected_epoch = 0;
  std::optional<double> test_accuracy;
  double wall_clock_seconds = 0.0;
  TrainConfig config;
  std::string pool_digest;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const RunReport& report);
RunReport run_report_from_json(const nlohmann::json& j);

struct Evaluation {
  double accuracy = 0.0;
  /// NaN for classes absent from the data.
  std::vector<double> per_class_accuracy;
  /// confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<std::size_t> predictions;
};

nlohmann::json to_json(const Evaluation& evaluation, std::span<const std::string> classes);

/// Eval mode (no dropout, running batch-norm statistics). Throws
/// VocabularyMismatch when the dataset's class list differs from the model's.
template <typename Real>
Evaluation evaluate(Model<Real>& model, const Dataset& dataset, std::size_t batch_size = 64);

using Optimizer = ad::RAdam<float>;

/// Optimization state of one training run. Weights are float32.
class Trainer {
 public:
  /// `validation` may be null (full protocol). The trainer keeps references to
  /// both datasets; they must outlive it.
  Trainer(const Dataset& train, const Dataset* validation, const ShapeletPool& pool, TrainConfig config);
  ~Trainer();
  Trainer(Trainer&&) noexcept;

  /// Runs one epoch and returns its record.
  const EpochRecord& step_epoch();
  /// Runs until `config.epochs` (or `until`) epochs are complete.
  void run(std::optional<std::size_t> until = std::nullopt,
           const std::function<void(const EpochRecord&)>& on_epoch = {});

  std::size_t epochs_done() const noexcept;
  const TrainConfig& config() const noexcept;
  const ShapeletPool& pool() const noexcept;
  Model<float>& model() noexcept;
  const Optimizer& optimizer() const noexcept;
  const RunReport& report() const noexcept;
  /// Loss of the most recent optimizer step.
  double last_batch_loss() const noexcept;

  /// Model weights of the selected epoch: best validation accuracy (ties go
  /// to the later epoch) under the split protocol, the last epoch otherwise.
  Model<float> selected_model() const;

  /// Writes the full resumable state. `extra` is stored under "extra".
  void save(const std::filesystem::path& dir, const nlohmann::json& extra = {}) const;
  /// Restores a state written by save(); `pool` must match the recorded digest.
  static Trainer resume(const std::filesystem::path& dir, const Dataset& train, const Dataset* validation,
                        const ShapeletPool& pool);

 private:
  struct State;
  explicit Trainer(std::unique_ptr<State> state);
  std::unique_ptr<State> state_;
};

struct TrainResult {
  Model<float> model;
  RunReport report;
};

/// Trains on `train` (validated on `validation` when given) and returns the
/// selected weights. Refuses test-tagged data and empty classes.
TrainResult train(const Dataset& train, const Dataset* validation, const ShapeletPool& pool, const TrainConfig& config);

struct WindowScore {
  std::size_t window = 0;
  double score = 0.0;
};

struct WindowTuning {
  std::size_t window = 0;
  std::vector<WindowScore> scores;
};

/// Scores every candidate with a PSD restricted to each window and keeps the
/// window whose `top_k` best gains sum highest; ties go to the smaller window.
WindowTuning tune_window(const Dataset& dataset, std::span<const std::size_t> windows, const DiscoveryConfig& base,
                         std::size_t top_k = 100);

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  Model<float> model;
  TrainConfig config;
  std::string pool_digest;
  NormalizationStats normalization;
  RunReport report;
};

/// Model bundle with config, pool and normalization statistics alongside.
void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model, const TrainConfig& config,
                     const NormalizationStats& normalization, const RunReport& report);
/// Uses the pool stored in the checkpoint, or verifies `pool` against the
/// recorded digest and throws ArtifactMismatch when they differ.
Checkpoint load_checkpoint(const std::filesystem::path& dir, const ShapeletPool* pool = nullptr);

/// Appends one JSON object per line.
void append_metrics_line(const std::filesystem::path& path, const nlohmann::json& record);
std::vector<nlohmann::json> read_metrics_log(const std::filesystem::path& path);

struct ExperimentResult {
  ShapeletPool pool;
  TrainResult training;
  NormalizationStats normalization;
  Evaluation test;
};

/// Normalizes with training statistics, discovers shapelets on the training
/// part, trains under `config.protocol` and evaluates on `test`.
ExperimentResult run_experiment(const Dataset& train_set, const Dataset& test_set, const TrainConfig& config);

}  // namespace shapeformer
