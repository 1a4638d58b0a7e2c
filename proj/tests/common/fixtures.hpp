#pragma once

#include <unistd.h>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "shapeformer/data_io.hpp"

namespace fixtures {

using shapeformer::Dataset;
using shapeformer::Instance;
using shapeformer::TimeSeries;

inline Dataset make_dataset(const std::vector<std::vector<std::vector<double>>>& series,
                            const std::vector<std::size_t>& labels, std::vector<std::string> classes,
                            std::string name = "fixture") {
  Dataset d;
  d.name = std::move(name);
  d.classes = std::move(classes);
  d.num_variables = series.at(0).size();
  d.series_length = series.at(0).at(0).size();
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::vector<double> flat;
    for (const auto& ch : series[i]) flat.insert(flat.end(), ch.begin(), ch.end());
    d.instances.push_back({TimeSeries("i" + std::to_string(i), d.num_variables, d.series_length, flat), labels[i]});
  }
  return d;
}

inline std::vector<double> noise(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

/// Two classes: "motif" instances carry a bump [0, 5, 0]-shaped pulse at a
/// jittered position on variable 0, "flat" instances are low-level noise.
inline Dataset motif_dataset(std::size_t per_class, std::size_t V, std::size_t T, std::uint64_t seed,
                             std::size_t jitter = 0, std::size_t motif_at = 0) {
  std::mt19937_64 rng(seed);
  if (motif_at == 0) motif_at = T / 3;
  std::vector<std::vector<std::vector<double>>> series;
  std::vector<std::size_t> labels;
  std::uniform_int_distribution<std::size_t> shift(0, 2 * jitter);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      std::vector<std::vector<double>> inst;
      for (std::size_t v = 0; v < V; ++v) inst.push_back(noise(rng, T, 0.05));
      if (c == 0) {
        const std::size_t at = motif_at + shift(rng) - jitter;
        const double pulse[] = {0.0, 2.5, 5.0, 2.5, 0.0};
        for (std::size_t k = 0; k < 5 && at + k < T; ++k) inst[0][at + k] += pulse[k];
      }
      series.push_back(std::move(inst));
      labels.push_back(c);
    }
  return make_dataset(series, labels, {"motif", "flat"}, "motif");
}

/// Random multiclass data where each class has its own sinusoid frequency.
inline Dataset wave_dataset(std::size_t per_class, std::size_t classes, std::size_t V, std::size_t T,
                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
  std::vector<std::vector<std::vector<double>>> series;
  std::vector<std::size_t> labels;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < classes; ++c) names.push_back("c" + std::to_string(c));
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<std::vector<double>> inst;
      for (std::size_t v = 0; v < V; ++v) {
        auto ch = noise(rng, T, 0.1);
        const double ph = phase(rng);
        for (std::size_t t = 0; t < T; ++t) ch[t] += std::sin(ph + double(t) * double(c + 1) * 6.283185307179586 / double(T));
        inst.push_back(std::move(ch));
      }
      series.push_back(std::move(inst));
      labels.push_back(c);
    }
  return make_dataset(series, labels, names, "waves");
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("shapeformer_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fixtures
