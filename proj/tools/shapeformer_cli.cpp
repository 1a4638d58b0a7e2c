// shapeformer command-line tool: discover, tune, train, eval, report, export, replay.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "shapeformer/data_io.hpp"
#include "shapeformer/digest.hpp"
#include "shapeformer/discovery.hpp"
#include "shapeformer/error.hpp"
#include "shapeformer/tensor_io.hpp"
#include "shapeformer/train.hpp"

#ifndef SHAPEFORMER_DEFAULTS_DIR
#define SHAPEFORMER_DEFAULTS_DIR "defaults"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace shapeformer;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kInput = 2, kArtifact = 3, kContract = 4 };

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

fs::path defaults_dir() {
  if (const char* env = std::getenv("SHAPEFORMER_DEFAULTS_DIR"); env && *env) return env;
  return SHAPEFORMER_DEFAULTS_DIR;
}

// Artifact digest: file contents, or manifest + buffer for a tensor bundle.
std::string artifact_digest(const fs::path& p) {
  if (fs::is_directory(p)) return ad::bundle_digest(p);
  return sha256_file(p);
}

// Options shared by commands that build a TrainConfig.
struct ConfigFlags {
  std::string config_path;
  std::string dataset_defaults;
  std::optional<double> lr, dropout, npip_ratio, val_fraction, weight_decay;
  std::optional<std::size_t> batch_size, epochs, heads, d_spe, d_gen, window, per_class, threads;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> class_token, position_source, protocol;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config with TrainConfig keys");
    app->add_option("--dataset", dataset_defaults, "apply shipped per-dataset defaults (window, shapelets per class)");
    app->add_option("--lr", lr);
    app->add_option("--weight-decay", weight_decay);
    app->add_option("--dropout", dropout);
    app->add_option("--npip-ratio", npip_ratio);
    app->add_option("--val-fraction", val_fraction);
    app->add_option("--batch-size", batch_size);
    app->add_option("--epochs", epochs);
    app->add_option("--heads", heads);
    app->add_option("--d-spe", d_spe);
    app->add_option("--d-gen", d_gen);
    app->add_option("--window", window);
    app->add_option("--per-class", per_class, "shapelets per class");
    app->add_option("--threads", threads, "worker threads, 0 = all cores");
    app->add_option("--seed", seed);
    app->add_option("--class-token", class_token)->check(CLI::IsMember({"first", "mean", "learnable"}));
    app->add_option("--position-source", position_source)->check(CLI::IsMember({"shapelet", "best_fit"}));
    app->add_option("--protocol", protocol)->check(CLI::IsMember({"split", "full"}));
  }

  TrainConfig resolve() const {
    TrainConfig c;
    if (!dataset_defaults.empty()) {
      const auto path = defaults_dir() / (dataset_defaults + ".json");
      if (!fs::exists(path)) throw InputError("no shipped defaults for dataset '" + dataset_defaults + "' (" +
                                              path.string() + ")");
      c = load_train_config(path, c);
    }
    if (!config_path.empty()) c = load_train_config(config_path, c);
    if (lr) c.lr = *lr;
    if (weight_decay) c.weight_decay = *weight_decay;
    if (dropout) c.dropout = *dropout;
    if (npip_ratio) c.npip_ratio = *npip_ratio;
    if (val_fraction) c.val_fraction = *val_fraction;
    if (batch_size) c.batch_size = *batch_size;
    if (epochs) c.epochs = *epochs;
    if (heads) c.heads = *heads;
    if (d_spe) c.d_spe = *d_spe;
    if (d_gen) c.d_gen = *d_gen;
    if (window) c.window = *window;
    if (per_class) c.shapelets_per_class = *per_class;
    if (threads) c.threads = *threads;
    if (seed) c.seed = *seed;
    if (class_token) c.class_token = class_token_policy_from(*class_token);
    if (position_source) c.position_source = position_source_from(*position_source);
    if (protocol) c.protocol = protocol_from(*protocol);
    c.validate();
    return c;
  }
};

struct Manifest {
  json j;
  fs::path dir;

  Manifest(const std::string& command, const std::vector<std::string>& argv, const fs::path& out) : dir(out) {
    j = {{"command", command}, {"argv", argv}, {"output_dir", fs::absolute(out).string()},
         {"started_at", utc_now()}, {"artifacts", json::object()}, {"inputs", json::object()}};
  }
  void input(const std::string& key, const fs::path& p) {
    j["inputs"][key] = {{"path", fs::absolute(p).string()}, {"sha256", artifact_digest(p)}};
  }
  void artifact(const fs::path& rel) { j["artifacts"][rel.string()] = artifact_digest(dir / rel); }
  void write() {
    j["finished_at"] = utc_now();
    write_file_atomic(dir / "manifest.json", j.dump(2) + "\n");
  }
};

// Training data normalized with its own statistics and, under the split
// protocol, divided into fit and validation parts.
struct PreparedData {
  Dataset full;
  NormalizationStats stats;
  Dataset fit;
  std::optional<Dataset> validation;
};

PreparedData prepare_training_data(const fs::path& path, const TrainConfig& config) {
  PreparedData p;
  auto raw = load_dataset(path);
  std::tie(p.full, p.stats) = normalize(raw);
  p.full.split = SplitTag::train;
  if (config.protocol == Protocol::split) {
    auto [fit, val] = split_train_val(p.full, 1.0 - config.val_fraction, config.seed);
    p.fit = std::move(fit);
    p.validation = std::move(val);
  } else {
    p.fit = p.full;
  }
  return p;
}

json discovery_stats(const DiscoveryResult& r) {
  const auto& pool = r.pool;
  json per_class = json::object();
  for (std::size_t c = 0; c < pool.classes.size(); ++c)
    per_class[pool.classes[c]] = {{"candidates", pool.candidate_counts.at(c)}, {"selected", pool.selected_counts.at(c)}};
  // Gain histogram over every scored candidate, 20 bins on [0, max].
  double mx = 0.0;
  for (double g : r.candidate_gains) mx = std::max(mx, g);
  const std::size_t bins = 20;
  std::vector<std::size_t> hist(bins, 0);
  for (double g : r.candidate_gains) {
    const auto b = mx > 0 ? std::min(bins - 1, static_cast<std::size_t>(g / mx * bins)) : 0;
    ++hist[b];
  }
  return {{"total_candidates", r.total_candidates},
          {"npip", pool.npip},
          {"per_class", std::move(per_class)},
          {"gain_histogram", {{"min", 0.0}, {"max", mx}, {"counts", hist}}}};
}

// ---------------------------------------------------------------------------

int cmd_discover(const fs::path& data, const ConfigFlags& flags, const fs::path& out,
                 const std::vector<std::string>& argv) {
  const auto config = flags.resolve();
  auto prepared = prepare_training_data(data, config);
  auto result = discover(prepared.fit, config.discovery_config());
  fs::create_directories(out);
  save_pool(result.pool, out / "pool.json");
  write_file_atomic(out / "discovery_stats.json", discovery_stats(result).dump(2) + "\n");

  Manifest m("discover", argv, out);
  m.input("data", data);
  if (!flags.config_path.empty()) m.input("config", flags.config_path);
  m.j["config"] = to_json(config);
  m.j["seed"] = config.seed;
  m.artifact("pool.json");
  m.artifact("discovery_stats.json");
  m.write();
  std::cout << "discovered " << result.pool.size() << " shapelets from " << result.total_candidates
            << " candidates; pool digest " << pool_digest(result.pool) << "\n";
  return kOk;
}

int cmd_tune(const fs::path& data, const ConfigFlags& flags, const std::vector<std::size_t>& windows,
             std::size_t top_k, const fs::path& out, const std::vector<std::string>& argv) {
  const auto config = flags.resolve();
  auto prepared = prepare_training_data(data, config);
  auto tuning = tune_window(prepared.fit, windows, config.discovery_config(), top_k);
  json scores = json::array();
  for (const auto& s : tuning.scores) scores.push_back({{"window", s.window}, {"score", s.score}});
  fs::create_directories(out);
  write_file_atomic(out / "tuning.json",
                    json({{"window", tuning.window}, {"top_k", top_k}, {"scores", scores}}).dump(2) + "\n");
  Manifest m("tune", argv, out);
  m.input("data", data);
  m.j["config"] = to_json(config);
  m.j["seed"] = config.seed;
  m.artifact("tuning.json");
  m.write();
  std::cout << "selected window " << tuning.window << "\n";
  return kOk;
}

int cmd_train(const fs::path& data, const std::string& pool_path, const std::string& test_path,
              const ConfigFlags& flags, const fs::path& out, std::size_t save_every, bool resume, bool quiet,
              const std::vector<std::string>& argv) {
  const auto config = flags.resolve();
  auto prepared = prepare_training_data(data, config);
  ShapeletPool pool;
  if (!pool_path.empty()) {
    pool = load_pool(pool_path);
    if (pool.classes != prepared.fit.classes)
      throw VocabularyMismatch("pool classes differ from the training data's classes");
    if (pool.num_variables != prepared.fit.num_variables || pool.series_length != prepared.fit.series_length)
      throw ArtifactMismatch("pool was discovered on data of a different shape");
  } else {
    pool = discover(prepared.fit, config.discovery_config()).pool;
  }

  fs::create_directories(out);
  const auto state_dir = out / "state";
  const auto log_path = out / "metrics.jsonl";
  const Dataset* val = prepared.validation ? &*prepared.validation : nullptr;
  std::optional<Trainer> trainer;
  if (resume && fs::exists(state_dir / "manifest.json")) {
    trainer.emplace(Trainer::resume(state_dir, prepared.fit, val, pool));
    if (trainer->config() != config)
      throw ArtifactMismatch("saved training state was produced with a different config");
    std::cerr << "resuming after epoch " << trainer->epochs_done() << "\n";
  } else {
    fs::remove(log_path);
    trainer.emplace(prepared.fit, val, pool, config);
  }

  trainer->run(std::nullopt, [&](const EpochRecord& e) {
    json line = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy},
                 {"val_accuracy", e.val_accuracy ? json(*e.val_accuracy) : json(nullptr)}};
    append_metrics_line(log_path, line);
    if (!quiet && (e.epoch == 1 || e.epoch % 10 == 0 || e.epoch == config.epochs)) {
      std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " train_acc " << e.train_accuracy;
      if (e.val_accuracy) std::cerr << " val_acc " << *e.val_accuracy;
      std::cerr << "\n";
    }
    if (save_every && e.epoch % save_every == 0) trainer->save(state_dir);
  });

  auto model = trainer->selected_model();
  RunReport report = trainer->report();
  if (!test_path.empty()) {
    auto test = normalize(load_dataset(test_path), prepared.stats).first;
    test.split = SplitTag::test;
    if (test.series_length < pool.series_length) pad_to_length(test, pool.series_length);
    report.test_accuracy = evaluate(model, test).accuracy;
  }
  save_checkpoint(out / "checkpoint", model, config, prepared.stats, report);
  save_pool(pool, out / "pool.json");
  write_file_atomic(out / "report.json", to_json(report).dump(2) + "\n");

  Manifest m("train", argv, out);
  m.input("data", data);
  if (!pool_path.empty()) m.input("pool", pool_path);
  if (!test_path.empty()) m.input("test", test_path);
  if (!flags.config_path.empty()) m.input("config", flags.config_path);
  m.j["config"] = to_json(config);
  m.j["seed"] = config.seed;
  m.artifact("checkpoint");
  m.artifact("pool.json");
  m.artifact("report.json");
  m.artifact("metrics.jsonl");
  if (fs::exists(state_dir / "manifest.json")) m.artifact("state");
  m.write();

  std::cout << "selected epoch " << report.selected_epoch << "; checkpoint digest "
            << artifact_digest(out / "checkpoint") << "\n";
  if (report.test_accuracy) std::cout << "test accuracy " << *report.test_accuracy << "\n";
  return kOk;
}

int cmd_eval(const fs::path& model_dir, const fs::path& data, const std::string& pool_path, fs::path out,
             const std::vector<std::string>& argv) {
  std::optional<ShapeletPool> pool;
  if (!pool_path.empty()) pool = load_pool(pool_path);
  auto ckpt = load_checkpoint(model_dir, pool ? &*pool : nullptr);
  auto raw = load_dataset(data);
  if (raw.num_variables != ckpt.model.config().num_variables)
    throw ContractViolation("dataset has " + std::to_string(raw.num_variables) + " variables, model expects " +
                            std::to_string(ckpt.model.config().num_variables));
  auto test = normalize(raw, ckpt.normalization).first;
  test.split = SplitTag::test;
  if (test.series_length < ckpt.model.config().series_length) pad_to_length(test, ckpt.model.config().series_length);
  auto ev = evaluate(ckpt.model, test);

  if (out.empty()) out = model_dir.parent_path() / "eval";
  fs::create_directories(out);
  const auto& classes = ckpt.model.pool().classes;
  std::ostringstream csv;
  csv << "true\\predicted";
  for (const auto& c : classes) csv << "," << c;
  csv << "\n";
  for (std::size_t i = 0; i < classes.size(); ++i) {
    csv << classes[i];
    for (auto n : ev.confusion[i]) csv << "," << n;
    csv << "\n";
  }
  write_file_atomic(out / "confusion.csv", csv.str());
  write_file_atomic(out / "eval.json", to_json(ev, classes).dump(2) + "\n");

  Manifest m("eval", argv, out);
  m.input("model", model_dir);
  m.input("data", data);
  if (!pool_path.empty()) m.input("pool", pool_path);
  m.j["seed"] = ckpt.config.seed;
  m.artifact("confusion.csv");
  m.artifact("eval.json");
  m.write();
  std::cout << "accuracy " << ev.accuracy << " (" << test.size() << " instances)\n";
  return kOk;
}

// Minimal SVG line chart.
std::string svg_chart(const std::string& title, const std::vector<std::pair<std::string, std::vector<double>>>& series,
                      bool unit_range) {
  const double W = 640, H = 400, L = 60, R = 20, T = 40, B = 50;
  double lo = unit_range ? 0.0 : INFINITY, hi = unit_range ? 1.0 : -INFINITY;
  std::size_t n = 0;
  for (const auto& [_, v] : series) {
    n = std::max(n, v.size());
    if (!unit_range)
      for (double x : v)
        if (std::isfinite(x)) lo = std::min(lo, x), hi = std::max(hi, x);
  }
  if (!(hi > lo)) hi = lo + 1.0;
  auto px = [&](std::size_t i) { return L + (n > 1 ? (W - L - R) * i / double(n - 1) : 0.0); };
  auto py = [&](double y) { return H - B - (H - T - B) * (y - lo) / (hi - lo); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c"};
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\">" << title
    << "</text>\n"
    << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = lo + (hi - lo) * k / 4.0;
    s << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
      << std::setprecision(3) << y << std::setprecision(2) << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">epoch (1.."
    << n << ")</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& [name, v] = series[k];
    s << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << colors[k % 3] << "\" points=\"";
    for (std::size_t i = 0; i < v.size(); ++i)
      if (std::isfinite(v[i])) s << px(i) << "," << py(v[i]) << " ";
    s << "\"/>\n<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (k + 1) << "\" text-anchor=\"end\" font-size=\"12\" fill=\""
      << colors[k % 3] << "\">" << name << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

int cmd_report(const fs::path& run_dir, const std::vector<std::string>& argv) {
  if (!fs::exists(run_dir / "report.json")) throw InputError("no report.json in " + run_dir.string());
  RunReport report;
  try {
    report = run_report_from_json(json::parse(read_text_file(run_dir / "report.json")));
  } catch (const json::parse_error& e) {
    throw ParseError("malformed report.json: " + std::string(e.what()));
  }
  std::vector<double> loss, train_acc, val_acc;
  for (const auto& e : report.epochs) {
    loss.push_back(e.train_loss);
    train_acc.push_back(e.train_accuracy);
    val_acc.push_back(e.val_accuracy.value_or(NAN));
  }
  const auto out = run_dir / "report";
  fs::create_directories(out);
  write_file_atomic(out / "loss.svg", svg_chart("training loss", {{"train loss", loss}}, false));
  std::vector<std::pair<std::string, std::vector<double>>> acc{{"train accuracy", train_acc}};
  if (std::any_of(val_acc.begin(), val_acc.end(), [](double v) { return std::isfinite(v); }))
    acc.push_back({"validation accuracy", val_acc});
  write_file_atomic(out / "accuracy.svg", svg_chart("accuracy", acc, true));

  std::ostringstream s;
  s << std::setprecision(6);
  auto row = [&](const std::string& k, const std::string& v) { s << std::left << std::setw(22) << k << v << "\n"; };
  auto num = [](double v) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(4) << v;
    return o.str();
  };
  row("epochs", std::to_string(report.epochs.size()));
  row("selected_epoch", std::to_string(report.selected_epoch));
  if (!report.epochs.empty()) {
    const auto& last = report.epochs.back();
    row("final_train_loss", num(last.train_loss));
    row("final_train_accuracy", num(last.train_accuracy));
    if (report.selected_epoch && report.epochs[report.selected_epoch - 1].val_accuracy)
      row("selected_val_accuracy", num(*report.epochs[report.selected_epoch - 1].val_accuracy));
  }
  row("test_accuracy", report.test_accuracy ? num(*report.test_accuracy) : "n/a");
  row("protocol", to_string(report.config.protocol));
  row("window", std::to_string(report.config.window));
  row("shapelets_per_class", std::to_string(report.config.shapelets_per_class));
  row("seed", std::to_string(report.seed));
  row("wall_clock_seconds", num(report.wall_clock_seconds));
  row("pool_digest", report.pool_digest);
  write_file_atomic(out / "summary.txt", s.str());

  Manifest m("report", argv, out);
  m.input("report", run_dir / "report.json");
  m.j["seed"] = report.seed;
  m.artifact("loss.svg");
  m.artifact("accuracy.svg");
  m.artifact("summary.txt");
  m.write();
  std::cout << s.str();
  return kOk;
}

// Per-instance fused embedding, prediction and attention, for offline analysis.
int cmd_export(const fs::path& model_dir, const fs::path& data, bool generic_attention, const fs::path& out,
               const std::vector<std::string>& argv) {
  auto ckpt = load_checkpoint(model_dir);
  auto ds = normalize(load_dataset(data), ckpt.normalization).first;
  ds.split = SplitTag::test;
  if (ds.series_length < ckpt.model.config().series_length) pad_to_length(ds, ckpt.model.config().series_length);
  if (ds.classes != ckpt.model.pool().classes) throw VocabularyMismatch("dataset classes differ from the model's");

  auto to_nested = [](const ad::Tensor<float>& t, std::size_t b) {
    // (B, h, n, n) -> [h][n][n] for instance b
    const std::size_t h = t.dim(1), n = t.dim(2);
    json heads = json::array();
    auto d = t.data();
    for (std::size_t k = 0; k < h; ++k) {
      json rows = json::array();
      for (std::size_t i = 0; i < n; ++i) {
        const float* r = d.data() + ((b * h + k) * n + i) * n;
        rows.push_back(std::vector<float>(r, r + n));
      }
      heads.push_back(std::move(rows));
    }
    return heads;
  };

  json instances = json::array();
  ad::Rng unused(0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const TimeSeries* one[] = {&ds.instances[i].series};
    ad::Graph<float> g(false);
    ForwardTrace<float> trace;
    auto logits = ckpt.model.forward(g, one, false, unused, &trace);
    auto z = logits.data();
    json rec = {{"id", ds.instances[i].series.id()},
                {"label", ds.classes[ds.instances[i].label]},
                {"prediction", ds.classes[std::max_element(z.begin(), z.end()) - z.begin()]},
                {"logits", std::vector<float>(z.begin(), z.end())},
                {"fused", std::vector<float>(trace.fused.data().begin(), trace.fused.data().end())},
                {"best_fit", trace.best_fit.at(0)}};
    json spe = json::array();
    for (const auto& a : trace.specific_attention) spe.push_back(to_nested(a, 0));
    rec["specific_attention"] = std::move(spe);
    if (generic_attention) {
      json gen = json::array();
      for (const auto& a : trace.generic_attention) gen.push_back(to_nested(a, 0));
      rec["generic_attention"] = std::move(gen);
    }
    instances.push_back(std::move(rec));
  }
  fs::create_directories(out);
  write_file_atomic(out / "embeddings.json",
                    json({{"classes", ds.classes}, {"instances", std::move(instances)}}).dump() + "\n");
  Manifest m("export", argv, out);
  m.input("model", model_dir);
  m.input("data", data);
  m.j["seed"] = ckpt.config.seed;
  m.artifact("embeddings.json");
  m.write();
  std::cout << "exported " << ds.size() << " instances\n";
  return kOk;
}

int run(int argc, char** argv);

int cmd_replay(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) throw InputError("manifest not found: " + manifest_path.string());
  json m;
  try {
    m = json::parse(read_text_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw ParseError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  auto args = m.at("argv").get<std::vector<std::string>>();
  std::vector<char*> ptrs;
  for (auto& a : args) ptrs.push_back(a.data());
  return run(static_cast<int>(ptrs.size()), ptrs.data());
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);

  CLI::App app{"Shapelet transformer for multivariate time-series classification"};
  app.require_subcommand(1);

  std::string data, out, pool_path, test_path, model_dir, run_dir, manifest_path;
  std::vector<std::size_t> windows(std::begin(kTuningWindows), std::end(kTuningWindows));
  std::size_t top_k = 100, save_every = 0;
  bool resume = false, quiet = false;

  ConfigFlags discover_flags, tune_flags, train_flags;
  auto* discover_cmd = app.add_subcommand("discover", "extract a shapelet pool from training data");
  discover_cmd->add_option("--data", data, "training .ts file")->required();
  discover_cmd->add_option("--out", out, "output directory")->required();
  discover_flags.attach(discover_cmd);

  auto* tune_cmd = app.add_subcommand("tune", "select the discovery window by summed top-k gain");
  tune_cmd->add_option("--data", data, "training .ts file")->required();
  tune_cmd->add_option("--out", out, "output directory")->required();
  tune_cmd->add_option("--windows", windows, "candidate windows")->delimiter(',');
  tune_cmd->add_option("--top-k", top_k, "shapelets scored per window");
  tune_flags.attach(tune_cmd);

  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  train_cmd->add_option("--data", data, "training .ts file")->required();
  train_cmd->add_option("--pool", pool_path, "pool.json from discover (discovered on the fly when omitted)");
  train_cmd->add_option("--test", test_path, "optional test .ts file scored with the selected weights");
  train_cmd->add_option("--out", out, "output directory")->required();
  train_cmd->add_option("--save-every", save_every, "write resumable state every N epochs");
  train_cmd->add_flag("--resume", resume, "continue from <out>/state when present");
  train_cmd->add_flag("--quiet", quiet, "no per-epoch progress");
  train_flags.attach(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--model", model_dir, "checkpoint directory")->required();
  eval_cmd->add_option("--data", data, "labelled .ts file")->required();
  eval_cmd->add_option("--pool", pool_path, "verify the checkpoint against this pool");
  eval_cmd->add_option("--out", out, "output directory (default: <model>/../eval)");

  auto* report_cmd = app.add_subcommand("report", "render curves and a summary for a training run");
  report_cmd->add_option("--run-dir", run_dir, "train output directory")->required();

  bool with_generic = false;
  auto* export_cmd = app.add_subcommand("export", "write fused embeddings and attention matrices per instance");
  export_cmd->add_option("--model", model_dir, "checkpoint directory")->required();
  export_cmd->add_option("--data", data, "labelled .ts file")->required();
  export_cmd->add_option("--out", out, "output directory")->required();
  export_cmd->add_flag("--generic-attention", with_generic, "include the (T x T) generic-branch attention");

  auto* replay_cmd = app.add_subcommand("replay", "re-run the command recorded in a manifest");
  replay_cmd->add_option("--manifest", manifest_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInput;
  }

  // Absolute paths keep the recorded command replayable from any directory.
  auto absolute_args = [&] {
    std::vector<std::string> a = args;
    for (std::size_t i = 1; i + 1 < a.size(); ++i)
      if (a[i] == "--data" || a[i] == "--out" || a[i] == "--pool" || a[i] == "--test" || a[i] == "--model" ||
          a[i] == "--config" || a[i] == "--run-dir")
        a[i + 1] = fs::absolute(a[i + 1]).string();
    return a;
  };

  if (*discover_cmd) return cmd_discover(data, discover_flags, out, absolute_args());
  if (*tune_cmd) return cmd_tune(data, tune_flags, windows, top_k, out, absolute_args());
  if (*train_cmd)
    return cmd_train(data, pool_path, test_path, train_flags, out, save_every, resume, quiet, absolute_args());
  if (*eval_cmd) return cmd_eval(model_dir, data, pool_path, out, absolute_args());
  if (*report_cmd) return cmd_report(run_dir, absolute_args());
  if (*export_cmd) return cmd_export(model_dir, data, with_generic, out, absolute_args());
  if (*replay_cmd) return cmd_replay(manifest_path);
  return kInternal;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  } catch (const ArtifactMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kArtifact;
  } catch (const VocabularyMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kContract;
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kContract;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}
