#pragma once

#include <random>
#include <vector>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "shapeformer/discovery.hpp"
#include "shapeformer/model.hpp"

namespace gradcheck {

/// Tiny two-shapelet model (V=2, T=16, d_spe=d_gen=8, h=2) in double
/// precision; every parameter element is probed against central differences
/// of the training-mode cross-entropy on a fixed batch.
inline Result tiny_model_check(std::uint64_t seed = 3,
                               shapeformer::ClassTokenPolicy policy = shapeformer::ClassTokenPolicy::first,
                               shapeformer::PositionSource source = shapeformer::PositionSource::shapelet) {
  using namespace shapeformer;
  auto data = fixtures::motif_dataset(3, 2, 16, seed);
  DiscoveryConfig dc;
  dc.per_class = 1;
  auto pool = discover(data, dc).pool;

  ModelConfig mc;
  mc.d_spe = 8;
  mc.d_gen = 8;
  mc.heads = 2;
  mc.window = 4;
  mc.dropout = 0.1;
  mc.class_token = policy;
  mc.position_source = source;
  Model<double> model(pool, mc, seed);
  // The head starts at zero; randomize it so upstream gradients are nonzero.
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> g(0.0, 0.5);
  for (const auto& p : model.parameters())
    if (p.name.starts_with("head.")) {
      auto t = p.tensor;
      for (auto& v : t.data()) v = g(rng);
    }

  std::vector<const TimeSeries*> batch;
  std::vector<std::size_t> labels;
  for (const auto& inst : data.instances) {
    batch.push_back(&inst.series);
    labels.push_back(inst.label);
  }
  Result r = check("tiny_model", model.parameters(), [&](Graph<double>& graph) {
    ad::Rng drop(11);
    auto logits = model.forward(graph, batch, true, drop);
    return graph.cross_entropy(logits, labels);
  });
  return r;
}

}  // namespace gradcheck
