#include "shapeformer/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "shapeformer/digest.hpp"
#include "shapeformer/error.hpp"
#include "shapeformer/tensor_io.hpp"

namespace shapeformer {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Protocol p) { return p == Protocol::split ? "split" : "full"; }

Protocol protocol_from(const std::string& s) {
  if (s == "split") return Protocol::split;
  if (s == "full") return Protocol::full;
  throw ContractViolation("unknown protocol '" + s + "' (split, full)");
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    SF_REQUIRE(v > 0, std::string("config: ") + name + " must be positive");
  };
  positive(batch_size, "batch_size");
  positive(epochs, "epochs");
  positive(heads, "heads");
  positive(d_spe, "d_spe");
  positive(d_gen, "d_gen");
  positive(window, "window");
  positive(shapelets_per_class, "shapelets_per_class");
  SF_REQUIRE(lr > 0.0, "config: lr must be positive");
  SF_REQUIRE(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "config: betas must lie in [0, 1)");
  SF_REQUIRE(weight_decay >= 0.0, "config: weight_decay must be non-negative");
  SF_REQUIRE(dropout >= 0.0 && dropout < 1.0, "config: dropout must lie in [0, 1)");
  SF_REQUIRE(val_fraction > 0.0 && val_fraction < 1.0, "config: val_fraction must lie in (0, 1)");
  SF_REQUIRE(npip_ratio > 0.0 && npip_ratio <= 1.0, "config: npip_ratio must lie in (0, 1]");
}

ModelConfig TrainConfig::model_config(const ShapeletPool& pool) const {
  ModelConfig m;
  m.num_variables = pool.num_variables;
  m.series_length = pool.series_length;
  m.num_classes = pool.classes.size();
  m.d_spe = d_spe;
  m.d_gen = d_gen;
  m.heads = heads;
  m.window = window;
  m.dropout = dropout;
  m.class_token = class_token;
  m.position_source = position_source;
  return m;
}

DiscoveryConfig TrainConfig::discovery_config() const {
  DiscoveryConfig d;
  d.npip_ratio = npip_ratio;
  d.per_class = shapelets_per_class;
  d.threads = threads;
  return d;
}

json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"heads", c.heads},
          {"d_spe", c.d_spe},
          {"d_gen", c.d_gen},
          {"dropout", c.dropout},
          {"npip_ratio", c.npip_ratio},
          {"window", c.window},
          {"shapelets_per_class", c.shapelets_per_class},
          {"seed", c.seed},
          {"val_fraction", c.val_fraction},
          {"class_token", to_string(c.class_token)},
          {"position_source", to_string(c.position_source)},
          {"protocol", to_string(c.protocol)},
          {"threads", c.threads}};
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
  if (!j.is_object()) throw InputError("config must be a JSON object");
  TrainConfig c = base;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "lr") c.lr = value.get<double>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "heads") c.heads = value.get<std::size_t>();
      else if (key == "d_spe") c.d_spe = value.get<std::size_t>();
      else if (key == "d_gen") c.d_gen = value.get<std::size_t>();
      else if (key == "dropout") c.dropout = value.get<double>();
      else if (key == "npip_ratio") c.npip_ratio = value.get<double>();
      else if (key == "window") c.window = value.get<std::size_t>();
      else if (key == "shapelets_per_class") c.shapelets_per_class = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "val_fraction") c.val_fraction = value.get<double>();
      else if (key == "class_token") c.class_token = class_token_policy_from(value.get<std::string>());
      else if (key == "position_source") c.position_source = position_source_from(value.get<std::string>());
      else if (key == "protocol") c.protocol = protocol_from(value.get<std::string>());
      else if (key == "threads") c.threads = value.get<std::size_t>();
      else throw InputError("unknown config key '" + key + "'");
    } catch (const json::exception& e) {
      throw InputError("config key '" + key + "': " + e.what());
    } catch (const ContractViolation& e) {
      throw InputError("config key '" + key + "': " + e.what());
    }
  }
  return c;
}

TrainConfig load_train_config(const fs::path& path, const TrainConfig& base) {
  if (!fs::exists(path)) throw InputError("config file not found: " + path.string());
  try {
    return train_config_from_json(json::parse(read_text_file(path)), base);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed config " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> number_or_null(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

json to_json(const RunReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_accuracy", e.train_accuracy},
                      {"val_accuracy", optional_number(e.val_accuracy)}});
  return {{"epochs", std::move(epochs)},
          {"selected_epoch", r.selected_epoch},
          {"test_accuracy", optional_number(r.test_accuracy)},
          {"wall_clock_seconds", r.wall_clock_seconds},
          {"config", to_json(r.config)},
          {"pool_digest", r.pool_digest},
          {"seed", r.seed}};
}

RunReport run_report_from_json(const json& j) {
  try {
    RunReport r;
    for (const auto& e : j.at("epochs"))
      r.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                          e.at("train_accuracy").get<double>(), number_or_null(e.at("val_accuracy"))});
    r.selected_epoch = j.at("selected_epoch").get<std::size_t>();
    r.test_accuracy = number_or_null(j.value("test_accuracy", json(nullptr)));
    r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    r.config = train_config_from_json(j.at("config"));
    r.pool_digest = j.at("pool_digest").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed run report: ") + e.what());
  }
}

json to_json(const Evaluation& ev, std::span<const std::string> classes) {
  json per_class = json::object();
  for (std::size_t c = 0; c < ev.per_class_accuracy.size(); ++c) {
    const double a = ev.per_class_accuracy[c];
    per_class[c < classes.size() ? classes[c] : std::to_string(c)] = std::isnan(a) ? json(nullptr) : json(a);
  }
  return {{"accuracy", ev.accuracy},
          {"classes", std::vector<std::string>(classes.begin(), classes.end())},
          {"per_class_accuracy", std::move(per_class)},
          {"confusion", ev.confusion},
          {"predictions", ev.predictions}};
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

void require_vocabulary(const std::vector<std::string>& model_classes, const Dataset& data) {
  if (model_classes == data.classes) return;
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& c : v) s += (s.empty() ? "" : ", ") + c;
    return "[" + s + "]";
  };
  throw VocabularyMismatch("class vocabulary mismatch: model has " + join(model_classes) + ", dataset '" + data.name +
                           "' has " + join(data.classes));
}

}  // namespace

template <typename Real>
Evaluation evaluate(Model<Real>& model, const Dataset& dataset, std::size_t batch_size) {
  require_vocabulary(model.pool().classes, dataset);
  SF_REQUIRE(batch_size > 0, "evaluate: batch size must be positive");
  SF_REQUIRE(!dataset.instances.empty(), "evaluate: dataset '" + dataset.name + "' is empty");
  const std::size_t C = dataset.classes.size(), M = dataset.size();
  Evaluation ev;
  ev.confusion.assign(C, std::vector<std::size_t>(C, 0));
  ev.predictions.reserve(M);
  for (std::size_t first = 0; first < M; first += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, M - first));
    std::iota(idx.begin(), idx.end(), first);
    auto batch = batch_of(dataset, idx);
    for (auto p : model.predict(batch)) ev.predictions.push_back(p);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < M; ++i) {
    const auto y = dataset.instances[i].label, p = ev.predictions[i];
    ++ev.confusion[y][p];
    correct += (y == p);
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(M);
  for (std::size_t c = 0; c < C; ++c) {
    const auto n = std::accumulate(ev.confusion[c].begin(), ev.confusion[c].end(), std::size_t{0});
    ev.per_class_accuracy.push_back(n ? static_cast<double>(ev.confusion[c][c]) / static_cast<double>(n)
                                      : std::numeric_limits<double>::quiet_NaN());
  }
  return ev;
}

template Evaluation evaluate<float>(Model<float>&, const Dataset&, std::size_t);
template Evaluation evaluate<double>(Model<double>&, const Dataset&, std::size_t);

// ---------------------------------------------------------------------------
// Trainer

namespace {

constexpr std::uint64_t kStreamOffset = 0x9E3779B97F4A7C15ULL;

std::string rng_to_string(const ad::Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

ad::Rng rng_from_string(const std::string& s) {
  ad::Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw ParseError("corrupt generator state in checkpoint");
  return rng;
}

ad::RAdamOptions optimizer_options(const TrainConfig& c) {
  ad::RAdamOptions o;
  o.lr = c.lr;
  o.beta1 = c.beta1;
  o.beta2 = c.beta2;
  o.weight_decay = c.weight_decay;
  return o;
}

void check_training_inputs(const Dataset& train, const Dataset* validation, const ShapeletPool& pool,
                           const TrainConfig& config) {
  config.validate();
  if (train.split == SplitTag::test) throw ContractViolation("refusing to train on test-tagged data '" + train.name + "'");
  if (validation && validation->split == SplitTag::test)
    throw ContractViolation("refusing to select a model on test-tagged data '" + validation->name + "'");
  train.validate();
  require_vocabulary(pool.classes, train);
  const auto counts = train.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] == 0) throw DataError("class '" + train.classes[c] + "' has no training instances");
  SF_REQUIRE(train.num_variables == pool.num_variables && train.series_length == pool.series_length,
             "training data shape differs from the shapelet pool's");
  if (validation) {
    validation->validate();
    require_vocabulary(pool.classes, *validation);
    SF_REQUIRE(!validation->instances.empty(), "validation set is empty");
  }
}

json history_json(const RunReport& report) {
  auto j = to_json(report);
  // Timing would make otherwise identical artifacts differ.
  j.erase("wall_clock_seconds");
  return j;
}

template <typename Real>
std::vector<ad::NamedTensor<Real>> with_prefix(const std::vector<ad::NamedTensor<Real>>& tensors,
                                               const std::string& prefix) {
  std::vector<ad::NamedTensor<Real>> out;
  for (const auto& t : tensors) out.push_back({prefix + t.name, t.tensor});
  return out;
}

template <typename Real>
std::vector<ad::NamedTensor<Real>> take_prefix(const std::vector<ad::NamedTensor<Real>>& tensors,
                                               const std::string& prefix) {
  std::vector<ad::NamedTensor<Real>> out;
  for (const auto& t : tensors)
    if (t.name.starts_with(prefix)) out.push_back({t.name.substr(prefix.size()), t.tensor});
  return out;
}

template <typename Real>
std::vector<ad::NamedTensor<Real>> without_prefixes(const std::vector<ad::NamedTensor<Real>>& tensors,
                                                    std::initializer_list<const char*> prefixes) {
  std::vector<ad::NamedTensor<Real>> out;
  for (const auto& t : tensors) {
    bool skip = false;
    for (const char* p : prefixes) skip = skip || t.name.starts_with(p);
    if (!skip) out.push_back(t);
  }
  return out;
}

json stats_json(const NormalizationStats& s) { return {{"mean", s.mean}, {"stddev", s.stddev}}; }

NormalizationStats stats_from_json(const json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("stddev").get<std::vector<double>>()};
}

}  // namespace

struct Trainer::State {
  State(const Dataset& train, const Dataset* validation, const ShapeletPool& pool_, TrainConfig config_)
      : train(&train),
        validation(validation),
        pool(pool_),
        digest(pool_digest(pool_)),
        config(config_),
        model(pool_, config_.model_config(pool_), config_.seed),
        optimizer(model.parameters(), optimizer_options(config_)),
        rng(config_.seed ^ kStreamOffset) {
    report.config = config;
    report.pool_digest = digest;
    report.seed = config.seed;
  }

  const Dataset* train;
  const Dataset* validation;
  ShapeletPool pool;
  std::string digest;
  TrainConfig config;
  Model<float> model;
  Optimizer optimizer;
  ad::Rng rng;
  RunReport report;
  std::vector<ad::NamedTensor<float>> best;
  double best_val = -1.0;
  double last_loss = std::numeric_limits<double>::quiet_NaN();
};

Trainer::Trainer(const Dataset& train, const Dataset* validation, const ShapeletPool& pool, TrainConfig config) {
  check_training_inputs(train, validation, pool, config);
  state_ = std::make_unique<State>(train, validation, pool, config);
}

Trainer::Trainer(std::unique_ptr<State> state) : state_(std::move(state)) {}
Trainer::~Trainer() = default;
Trainer::Trainer(Trainer&&) noexcept = default;

std::size_t Trainer::epochs_done() const noexcept { return state_->report.epochs.size(); }
const TrainConfig& Trainer::config() const noexcept { return state_->config; }
const ShapeletPool& Trainer::pool() const noexcept { return state_->pool; }
Model<float>& Trainer::model() noexcept { return state_->model; }
const Optimizer& Trainer::optimizer() const noexcept { return state_->optimizer; }
const RunReport& Trainer::report() const noexcept { return state_->report; }
double Trainer::last_batch_loss() const noexcept { return state_->last_loss; }

const EpochRecord& Trainer::step_epoch() {
  auto& s = *state_;
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset& data = *s.train;
  const std::size_t M = data.size(), C = data.classes.size(), bs = s.config.batch_size;

  std::vector<std::size_t> order(M);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), s.rng);

  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t first = 0; first < M; first += bs) {
    std::span<const std::size_t> idx(order.data() + first, std::min(bs, M - first));
    auto batch = batch_of(data, idx);
    std::vector<std::size_t> labels;
    for (auto i : idx) labels.push_back(data.instances[i].label);

    ad::Graph<float> g;
    auto logits = s.model.forward(g, batch, true, s.rng);
    auto loss = g.cross_entropy(logits, labels);
    g.backward(loss);
    for (auto& p : s.model.parameters()) {
      auto t = p.tensor;
      t.mutable_grad();  // parameters the loss does not reach get a zero gradient
    }
    s.optimizer.step();
    s.optimizer.zero_grad();

    s.last_loss = loss.item();
    loss_sum += s.last_loss * static_cast<double>(idx.size());
    auto z = logits.data();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const float* row = z.data() + b * C;
      correct += static_cast<std::size_t>(std::max_element(row, row + C) - row) == labels[b];
    }
  }

  EpochRecord rec;
  rec.epoch = s.report.epochs.size() + 1;
  rec.train_loss = loss_sum / static_cast<double>(M);
  rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(M);
  if (s.validation) {
    rec.val_accuracy = evaluate(s.model, *s.validation, std::max<std::size_t>(bs, 64)).accuracy;
    if (*rec.val_accuracy >= s.best_val) {
      s.best_val = *rec.val_accuracy;
      s.best = s.model.snapshot();
      s.report.selected_epoch = rec.epoch;
    }
  } else {
    s.report.selected_epoch = rec.epoch;
  }
  s.report.epochs.push_back(rec);
  s.report.wall_clock_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s.report.epochs.back();
}

void Trainer::run(std::optional<std::size_t> until, const std::function<void(const EpochRecord&)>& on_epoch) {
  const std::size_t target = until.value_or(state_->config.epochs);
  SF_REQUIRE(target <= state_->config.epochs, "trainer: cannot run past the configured epoch count");
  while (epochs_done() < target) {
    const auto& rec = step_epoch();
    if (on_epoch) on_epoch(rec);
  }
}

Model<float> Trainer::selected_model() const {
  const auto& s = *state_;
  Model<float> out(s.pool, s.model.config(), 0);
  if (s.validation && !s.best.empty())
    out.restore(s.best);
  else
    out.restore(s.model.snapshot());
  return out;
}

void Trainer::save(const fs::path& dir, const json& extra) const {
  const auto& s = *state_;
  auto tensors = s.model.snapshot();
  for (auto& t : with_prefix(s.optimizer.state(), "optim.")) tensors.push_back(t);
  for (auto& t : with_prefix(s.best, "best.")) tensors.push_back(t);
  json meta = {{"format", "shapeformer-trainer"},
               {"version", kCheckpointFormatVersion},
               {"config", to_json(s.config)},
               {"pool", json::parse(pool_to_text(s.pool))},
               {"pool_digest", s.digest},
               {"optimizer_steps", s.optimizer.steps()},
               {"rng", rng_to_string(s.rng)},
               {"best_val", s.best_val},
               {"last_loss", s.last_loss},
               {"history", history_json(s.report)},
               {"extra", extra}};
  ad::save_bundle<float>(dir, tensors, meta);
}

Trainer Trainer::resume(const fs::path& dir, const Dataset& train, const Dataset* validation,
                        const ShapeletPool& pool) {
  auto bundle = ad::load_bundle<float>(dir);
  const auto& meta = bundle.metadata;
  try {
    if (meta.at("format").get<std::string>() != "shapeformer-trainer")
      throw ArtifactMismatch(dir.string() + " is not a resumable training state");
    if (meta.at("version").get<int>() != kCheckpointFormatVersion)
      throw ArtifactMismatch("training state version mismatch: expected " + std::to_string(kCheckpointFormatVersion) +
                             ", found " + std::to_string(meta.at("version").get<int>()));
    const auto digest = pool_digest(pool);
    if (meta.at("pool_digest").get<std::string>() != digest)
      throw ArtifactMismatch("shapelet pool digest " + digest + " does not match the training state (" +
                             meta.at("pool_digest").get<std::string>() + ")");
    const auto config = train_config_from_json(meta.at("config"));
    check_training_inputs(train, validation, pool, config);
    auto state = std::make_unique<State>(train, validation, pool, config);
    state->model.restore(without_prefixes(bundle.tensors, {"optim.", "best."}));
    state->optimizer.load_state(meta.at("optimizer_steps").get<std::uint64_t>(),
                                take_prefix(bundle.tensors, "optim."));
    state->best = take_prefix(bundle.tensors, "best.");
    state->rng = rng_from_string(meta.at("rng").get<std::string>());
    state->best_val = meta.at("best_val").get<double>();
    state->last_loss = meta.at("last_loss").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                      : meta.at("last_loss").get<double>();
    state->report = run_report_from_json(meta.at("history"));
    return Trainer(std::move(state));
  } catch (const json::exception& e) {
    throw ParseError("malformed training state in " + dir.string() + ": " + e.what());
  }
}

TrainResult train(const Dataset& train_data, const Dataset* validation, const ShapeletPool& pool,
                  const TrainConfig& config) {
  Trainer trainer(train_data, validation, pool, config);
  trainer.run();
  return {trainer.selected_model(), trainer.report()};
}

// ---------------------------------------------------------------------------
// Window tuning

WindowTuning tune_window(const Dataset& dataset, std::span<const std::size_t> windows, const DiscoveryConfig& base,
                         std::size_t top_k) {
  SF_REQUIRE(!windows.empty(), "tune_window: no candidate windows");
  SF_REQUIRE(top_k > 0, "tune_window: top_k must be positive");
  std::vector<std::size_t> sorted(windows.begin(), windows.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  WindowTuning out;
  if (sorted.size() == 1) {
    out.window = sorted.front();
    return out;
  }
  const auto npip = default_npip(dataset.series_length, base.npip_ratio, base.min_npip);
  const auto candidates = extract_candidates(dataset, npip);
  double best = -1.0;
  for (auto w : sorted) {
    auto scored = candidates;
    DiscoveryConfig cfg = base;
    cfg.window = w;
    score_candidates(scored, dataset, cfg);
    std::vector<double> gains;
    for (const auto& c : scored) gains.push_back(c.gain);
    const auto k = std::min(top_k, gains.size());
    std::partial_sort(gains.begin(), gains.begin() + static_cast<std::ptrdiff_t>(k), gains.end(), std::greater<>());
    const double score = std::accumulate(gains.begin(), gains.begin() + static_cast<std::ptrdiff_t>(k), 0.0);
    out.scores.push_back({w, score});
    if (score > best) {
      best = score;
      out.window = w;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const fs::path& dir, const Model<float>& model, const TrainConfig& config,
                     const NormalizationStats& normalization, const RunReport& report) {
  json meta = {{"format", "shapeformer-checkpoint"},
               {"version", kCheckpointFormatVersion},
               {"config", to_json(config)},
               {"classes", model.pool().classes},
               {"pool", json::parse(pool_to_text(model.pool()))},
               {"pool_digest", pool_digest(model.pool())},
               {"normalization", stats_json(normalization)},
               {"history", history_json(report)}};
  ad::save_bundle<float>(dir, model.snapshot(), meta);
}

Checkpoint load_checkpoint(const fs::path& dir, const ShapeletPool* pool) {
  auto bundle = ad::load_bundle<float>(dir);
  const auto& meta = bundle.metadata;
  try {
    if (meta.at("format").get<std::string>() != "shapeformer-checkpoint")
      throw ArtifactMismatch(dir.string() + " is not a model checkpoint");
    const int version = meta.at("version").get<int>();
    if (version != kCheckpointFormatVersion)
      throw ArtifactMismatch("checkpoint version mismatch: expected " + std::to_string(kCheckpointFormatVersion) +
                             ", found " + std::to_string(version));
    const auto recorded = meta.at("pool_digest").get<std::string>();
    ShapeletPool stored = pool_from_text(meta.at("pool").dump());
    if (pool_digest(stored) != recorded) throw ArtifactMismatch("checkpoint pool does not match its recorded digest");
    if (pool) {
      const auto supplied = pool_digest(*pool);
      if (supplied != recorded)
        throw ArtifactMismatch("shapelet pool digest " + supplied + " does not match the checkpoint (" + recorded + ")");
    }
    const auto config = train_config_from_json(meta.at("config"));
    Model<float> model(stored, config.model_config(stored), 0);
    model.restore(bundle.tensors);
    return {std::move(model), config, recorded, stats_from_json(meta.at("normalization")),
            run_report_from_json(meta.at("history"))};
  } catch (const json::exception& e) {
    throw ParseError("malformed checkpoint metadata in " + dir.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Metrics log

void append_metrics_line(const fs::path& path, const json& record) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw InputError("cannot append to " + path.string());
  out << record.dump() << '\n';
}

std::vector<json> read_metrics_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read metrics log " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ParseError("malformed metrics line in " + path.string() + ": " + e.what(), n);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// End to end

ExperimentResult run_experiment(const Dataset& train_set, const Dataset& test_set, const TrainConfig& config) {
  config.validate();
  auto [train_norm, stats] = normalize(train_set);
  auto test_norm = normalize(test_set, stats).first;
  train_norm.split = SplitTag::train;
  test_norm.split = SplitTag::test;

  std::optional<Dataset> fit_part, val_part;
  if (config.protocol == Protocol::split) {
    auto [a, b] = split_train_val(train_norm, 1.0 - config.val_fraction, config.seed);
    fit_part = std::move(a);
    val_part = std::move(b);
  } else {
    fit_part = train_norm;
  }
  auto discovery = discover(*fit_part, config.discovery_config());
  auto result = train(*fit_part, val_part ? &*val_part : nullptr, discovery.pool, config);
  auto test = evaluate(result.model, test_norm);
  result.report.test_accuracy = test.accuracy;
  return {std::move(discovery.pool), std::move(result), std::move(stats), std::move(test)};
}

}  // namespace shapeformer
