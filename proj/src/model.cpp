#include "shapeformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "shapeformer/error.hpp"
#include "shapeformer/metrics.hpp"

namespace shapeformer {

using ad::Graph;
using ad::Shape;
using ad::Tensor;

std::string to_string(ClassTokenPolicy p) {
  switch (p) {
    case ClassTokenPolicy::first: return "first";
    case ClassTokenPolicy::mean: return "mean";
    case ClassTokenPolicy::learnable: return "learnable";
  }
  return "first";
}

std::string to_string(PositionSource p) { return p == PositionSource::shapelet ? "shapelet" : "best_fit"; }

ClassTokenPolicy class_token_policy_from(const std::string& s) {
  if (s == "first") return ClassTokenPolicy::first;
  if (s == "mean") return ClassTokenPolicy::mean;
  if (s == "learnable") return ClassTokenPolicy::learnable;
  throw ContractViolation("unknown class-token policy '" + s + "' (first, mean, learnable)");
}

PositionSource position_source_from(const std::string& s) {
  if (s == "shapelet") return PositionSource::shapelet;
  if (s == "best_fit") return PositionSource::best_fit;
  throw ContractViolation("unknown position source '" + s + "' (shapelet, best_fit)");
}

BestFit find_best_fit(const TimeSeries& series, std::span<const double> shapelet, std::size_t variable,
                      std::size_t start, std::size_t window) {
  SF_REQUIRE(variable < series.num_variables(), "find_best_fit: shapelet variable " + std::to_string(variable) +
                                                    " >= V = " + std::to_string(series.num_variables()));
  const std::size_t l = shapelet.size();
  SF_REQUIRE(l >= 2 && l <= series.length(), "find_best_fit: shapelet length does not fit the series");
  const std::size_t last = series.length() - l;
  const std::size_t anchor = std::min(start, last);
  const std::size_t lo = anchor > window ? anchor - window : 0;
  const std::size_t hi = std::min(last, anchor + window);
  auto ch = series.channel(variable);
  const auto m = metrics::best_match(ch, shapelet, lo, hi);
  BestFit out;
  out.index = m.offset;
  out.distance = m.distance;
  out.subsequence.assign(ch.begin() + static_cast<std::ptrdiff_t>(m.offset),
                         ch.begin() + static_cast<std::ptrdiff_t>(m.offset + l));
  return out;
}

std::vector<const TimeSeries*> batch_of(const Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<const TimeSeries*> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(&dataset.instances.at(i).series);
  return out;
}

// ---------------------------------------------------------------------------
// Encoder

template <typename Real>
Tensor<Real> encoder_forward(Graph<Real>& g, const Tensor<Real>& x, const EncoderParams<Real>& p, double dropout,
                             bool train, ad::Rng& rng, std::vector<Tensor<Real>>* attention) {
  SF_REQUIRE(x.rank() == 3, "encoder: tokens must be (B, n, d), got " + ad::shape_str(x.shape()));
  SF_REQUIRE(x.dim(2) == p.width, "encoder: token width " + std::to_string(x.dim(2)) + " != encoder width " +
                                      std::to_string(p.width));
  const std::size_t B = x.dim(0), n = x.dim(1), d = p.width, h = p.heads, dh = d / h;

  auto split_heads = [&](const Tensor<Real>& t) { return g.permute(g.reshape(t, {B, n, h, dh}), {0, 2, 1, 3}); };
  auto q = split_heads(g.linear(x, p.wq, p.bq));
  auto k = split_heads(g.linear(x, p.wk, p.bk));
  auto v = split_heads(g.linear(x, p.wv, p.bv));
  auto scores = g.scale(g.matmul(q, g.transpose(k)), Real(1.0 / std::sqrt(static_cast<double>(dh))));
  auto weights = g.softmax(scores, 3);
  if (attention) attention->push_back(weights);
  auto ctx = g.reshape(g.permute(g.matmul(weights, v), {0, 2, 1, 3}), {B, n, d});
  auto attended = g.dropout(g.linear(ctx, p.wo, p.bo), dropout, train, rng);
  auto x1 = g.layer_norm(g.add(x, attended), p.ln1_gamma, p.ln1_beta);
  auto ff = g.linear(g.gelu(g.linear(x1, p.ff1_w, p.ff1_b)), p.ff2_w, p.ff2_b);
  ff = g.dropout(ff, dropout, train, rng);
  return g.layer_norm(g.add(x1, ff), p.ln2_gamma, p.ln2_beta);
}

// ---------------------------------------------------------------------------
// Construction

template <typename Real>
Tensor<Real> Model<Real>::param(const std::string& name, Shape shape, double bound, ad::Rng& rng) {
  Tensor<Real> t(std::move(shape), true);
  for (auto& v : t.data()) v = static_cast<Real>((2.0 * ad::uniform01(rng) - 1.0) * bound);
  parameters_.push_back({name, t});
  return t;
}

template <typename Real>
Tensor<Real> Model<Real>::constant_param(const std::string& name, Shape shape, Real value) {
  Tensor<Real> t(std::move(shape), true);
  std::fill(t.data().begin(), t.data().end(), value);
  parameters_.push_back({name, t});
  return t;
}

template <typename Real>
Tensor<Real> Model<Real>::buffer(const std::string& name, Shape shape, Real value) {
  Tensor<Real> t(std::move(shape), false);
  std::fill(t.data().begin(), t.data().end(), value);
  buffers_.push_back({name, t});
  return t;
}

namespace {
double fan_in_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }
}  // namespace

template <typename Real>
EncoderParams<Real> Model<Real>::make_encoder(const std::string& prefix, std::size_t width, ad::Rng& rng) {
  EncoderParams<Real> e;
  e.width = width;
  e.heads = config_.heads;
  if (e.heads > width) {
    warn(prefix + ": " + std::to_string(e.heads) + " heads exceed width " + std::to_string(width) + "; clamped");
    e.heads = width;
  }
  SF_REQUIRE(e.heads > 0 && width % e.heads == 0,
             prefix + ": width " + std::to_string(width) + " is not divisible by " + std::to_string(e.heads) + " heads");
  const std::size_t hidden = width * config_.ff_multiplier;
  const double b = fan_in_bound(width);
  e.wq = param(prefix + ".wq", {width, width}, b, rng);
  e.bq = constant_param(prefix + ".bq", {width}, 0);
  e.wk = param(prefix + ".wk", {width, width}, b, rng);
  e.bk = constant_param(prefix + ".bk", {width}, 0);
  e.wv = param(prefix + ".wv", {width, width}, b, rng);
  e.bv = constant_param(prefix + ".bv", {width}, 0);
  e.wo = param(prefix + ".wo", {width, width}, b, rng);
  e.bo = constant_param(prefix + ".bo", {width}, 0);
  e.ln1_gamma = constant_param(prefix + ".ln1.gamma", {width}, 1);
  e.ln1_beta = constant_param(prefix + ".ln1.beta", {width}, 0);
  e.ff1_w = param(prefix + ".ff1.w", {width, hidden}, b, rng);
  e.ff1_b = constant_param(prefix + ".ff1.b", {hidden}, 0);
  e.ff2_w = param(prefix + ".ff2.w", {hidden, width}, fan_in_bound(hidden), rng);
  e.ff2_b = constant_param(prefix + ".ff2.b", {width}, 0);
  e.ln2_gamma = constant_param(prefix + ".ln2.gamma", {width}, 1);
  e.ln2_beta = constant_param(prefix + ".ln2.beta", {width}, 0);
  return e;
}

template <typename Real>
Model<Real>::Model(const ShapeletPool& pool, ModelConfig config, std::uint64_t seed) : pool_(pool), config_(config) {
  SF_REQUIRE(!pool.shapelets.empty(), "model: shapelet pool is empty");
  if (config_.num_variables == 0) config_.num_variables = pool.num_variables;
  if (config_.series_length == 0) config_.series_length = pool.series_length;
  if (config_.num_classes == 0) config_.num_classes = pool.classes.size();
  SF_REQUIRE(config_.num_variables == pool.num_variables && config_.series_length == pool.series_length,
             "model: configured series shape differs from the pool's");
  SF_REQUIRE(config_.num_classes >= 2, "model: need at least two classes");
  SF_REQUIRE(config_.d_spe > 0 && config_.d_gen > 0 && config_.heads > 0 && config_.encoder_layers > 0,
             "model: widths, heads and depth must be positive");
  SF_REQUIRE(config_.dropout >= 0.0 && config_.dropout < 1.0, "model: dropout must lie in [0, 1)");
  SF_REQUIRE(config_.conv_kernel > 0, "model: convolution kernel must be positive");

  ad::Rng rng(seed);
  const std::size_t T = config_.series_length, V = config_.num_variables, ds = config_.d_spe, dg = config_.d_gen;

  for (std::size_t i = 0; i < pool.shapelets.size(); ++i) {
    const auto& s = pool.shapelets[i];
    SF_REQUIRE(s.end <= T && s.variable < V && s.values.size() == s.end - s.start,
               "model: pool shapelet " + std::to_string(i) + " does not fit the series shape");
    ShapeletSlot<Real> slot;
    slot.variable = s.variable;
    slot.start = s.start;
    slot.end = s.end;
    const std::string pre = "spe.shapelet." + std::to_string(i);
    const std::size_t l = s.values.size();
    std::vector<Real> init(s.values.begin(), s.values.end());
    slot.values = Tensor<Real>({1, l}, std::move(init), true);
    parameters_.push_back({pre + ".values", slot.values});
    slot.proj_i_w = param(pre + ".proj_i.w", {l, ds}, fan_in_bound(l), rng);
    slot.proj_i_b = constant_param(pre + ".proj_i.b", {ds}, 0);
    slot.proj_s_w = param(pre + ".proj_s.w", {l, ds}, fan_in_bound(l), rng);
    slot.proj_s_b = constant_param(pre + ".proj_s.b", {ds}, 0);
    filter_.slots.push_back(std::move(slot));
  }
  filter_.pe_start_w = param("spe.pe_start.w", {T + 1, ds}, fan_in_bound(T + 1), rng);
  filter_.pe_start_b = constant_param("spe.pe_start.b", {ds}, 0);
  filter_.pe_end_w = param("spe.pe_end.w", {T + 1, ds}, fan_in_bound(T + 1), rng);
  filter_.pe_end_b = constant_param("spe.pe_end.b", {ds}, 0);
  filter_.pe_var_w = param("spe.pe_var.w", {V, ds}, fan_in_bound(V), rng);
  filter_.pe_var_b = constant_param("spe.pe_var.b", {ds}, 0);
  if (config_.class_token == ClassTokenPolicy::learnable)
    class_token_ = param("spe.class_token", {1, 1, ds}, 0.02, rng);
  for (std::size_t l = 0; l < config_.encoder_layers; ++l)
    specific_encoder_.push_back(make_encoder("spe.encoder." + std::to_string(l), ds, rng));

  const std::size_t K = config_.conv_kernel;
  generic_.conv1_w = param("gen.conv1.w", {dg, 1, 1, K}, fan_in_bound(K), rng);
  generic_.conv1_b = constant_param("gen.conv1.b", {dg}, 0);
  generic_.bn1_gamma = constant_param("gen.bn1.gamma", {dg}, 1);
  generic_.bn1_beta = constant_param("gen.bn1.beta", {dg}, 0);
  generic_.conv2_w = param("gen.conv2.w", {dg, dg, V, 1}, fan_in_bound(dg * V), rng);
  generic_.conv2_b = constant_param("gen.conv2.b", {dg}, 0);
  generic_.bn2_gamma = constant_param("gen.bn2.gamma", {dg}, 1);
  generic_.bn2_beta = constant_param("gen.bn2.beta", {dg}, 0);
  generic_.position = param("gen.position", {T, dg}, 0.02, rng);
  for (std::size_t l = 0; l < config_.encoder_layers; ++l)
    generic_encoder_.push_back(make_encoder("gen.encoder." + std::to_string(l), dg, rng));

  // Zero head: the initial predictive distribution is uniform.
  head_w_ = constant_param("head.w", {ds + dg, config_.num_classes}, 0);
  head_b_ = constant_param("head.b", {config_.num_classes}, 0);

  generic_.bn1_mean = buffer("gen.bn1.running_mean", {dg}, 0);
  generic_.bn1_var = buffer("gen.bn1.running_var", {dg}, 1);
  generic_.bn2_mean = buffer("gen.bn2.running_mean", {dg}, 0);
  generic_.bn2_var = buffer("gen.bn2.running_var", {dg}, 1);
}

template <typename Real>
std::size_t Model<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters_) n += p.tensor.numel();
  return n;
}

template <typename Real>
std::vector<ad::NamedTensor<Real>> Model<Real>::snapshot() const {
  std::vector<ad::NamedTensor<Real>> out;
  for (const auto& p : parameters_) out.push_back({p.name, p.tensor.clone()});
  for (const auto& b : buffers_) out.push_back({b.name, b.tensor.clone()});
  for (auto& t : out) t.tensor.set_requires_grad(false);
  return out;
}

template <typename Real>
template <typename Other>
void Model<Real>::restore(const std::vector<ad::NamedTensor<Other>>& state) {
  std::map<std::string, const ad::Tensor<Other>*> by_name;
  for (const auto& t : state) by_name.emplace(t.name, &t.tensor);
  auto check = [&](const ad::NamedTensor<Real>& dst) {
    auto it = by_name.find(dst.name);
    SF_REQUIRE(it != by_name.end(), "model state is missing tensor '" + dst.name + "'");
    SF_REQUIRE(it->second->shape() == dst.tensor.shape(),
               "model state tensor '" + dst.name + "' has shape " + ad::shape_str(it->second->shape()) + ", expected " +
                   ad::shape_str(dst.tensor.shape()));
  };
  for (const auto& p : parameters_) check(p);
  for (const auto& b : buffers_) check(b);
  SF_REQUIRE(by_name.size() == parameters_.size() + buffers_.size(), "model state has unexpected extra tensors");
  auto copy = [&](ad::NamedTensor<Real>& dst) {
    auto src = by_name.at(dst.name)->data();
    auto out = dst.tensor.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Real>(src[i]);
  };
  for (auto& p : parameters_) copy(p);
  for (auto& b : buffers_) copy(b);
}

// ---------------------------------------------------------------------------
// Forward

template <typename Real>
Tensor<Real> Model<Real>::difference_tokens(Graph<Real>& g, Batch batch, ForwardTrace<Real>* trace) const {
  SF_REQUIRE(!batch.empty(), "forward: empty batch");
  const std::size_t B = batch.size(), G = filter_.slots.size(), T = config_.series_length, ds = config_.d_spe;
  for (const auto* s : batch)
    SF_REQUIRE(s->num_variables() == config_.num_variables && s->length() == T,
               "forward: series shape (" + std::to_string(s->num_variables()) + ", " + std::to_string(s->length()) +
                   ") does not match model (" + std::to_string(config_.num_variables) + ", " + std::to_string(T) + ")");

  std::vector<std::vector<std::size_t>> offsets(B, std::vector<std::size_t>(G));
  std::vector<Tensor<Real>> tokens;
  tokens.reserve(G);
  for (std::size_t i = 0; i < G; ++i) {
    const auto& slot = filter_.slots[i];
    const std::size_t l = slot.end - slot.start;
    std::vector<double> current(slot.values.data().begin(), slot.values.data().end());
    std::vector<Real> fit(B * l);
    for (std::size_t b = 0; b < B; ++b) {
      // The window choice is a constant of this pass; gradients reach only the values.
      const auto bf = find_best_fit(*batch[b], current, slot.variable, slot.start, config_.window);
      offsets[b][i] = bf.index;
      std::copy(bf.subsequence.begin(), bf.subsequence.end(), fit.begin() + static_cast<std::ptrdiff_t>(b * l));
    }
    Tensor<Real> best({B, l}, std::move(fit));
    auto projected_fit = g.linear(best, slot.proj_i_w, slot.proj_i_b);           // (B, ds)
    auto projected_shapelet = g.linear(slot.values, slot.proj_s_w, slot.proj_s_b);  // (1, ds)
    tokens.push_back(g.reshape(g.subtract(projected_fit, projected_shapelet), {B, 1, ds}));
  }
  auto U = g.concat(tokens, 1);  // (B, G, ds)

  std::vector<std::size_t> starts, ends, vars;
  if (config_.position_source == PositionSource::shapelet) {
    for (const auto& slot : filter_.slots) {
      starts.push_back(slot.start);
      ends.push_back(slot.end);
      vars.push_back(slot.variable);
    }
  } else {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < G; ++i) {
        const auto& slot = filter_.slots[i];
        starts.push_back(offsets[b][i]);
        ends.push_back(offsets[b][i] + slot.end - slot.start);
        vars.push_back(slot.variable);
      }
  }
  auto pe = g.add(g.add(g.linear(ad::one_hot<Real>(starts, T + 1), filter_.pe_start_w, filter_.pe_start_b),
                        g.linear(ad::one_hot<Real>(ends, T + 1), filter_.pe_end_w, filter_.pe_end_b)),
                  g.linear(ad::one_hot<Real>(vars, config_.num_variables), filter_.pe_var_w, filter_.pe_var_b));
  if (config_.position_source == PositionSource::best_fit) pe = g.reshape(pe, {B, G, ds});
  if (trace) trace->best_fit = std::move(offsets);
  return g.add(U, pe);
}

template <typename Real>
Tensor<Real> Model<Real>::class_specific_forward(Graph<Real>& g, Batch batch, bool train, ad::Rng& rng,
                                                 ForwardTrace<Real>* trace) const {
  auto x = difference_tokens(g, batch, trace);
  const std::size_t B = batch.size(), ds = config_.d_spe;
  if (config_.class_token == ClassTokenPolicy::learnable) {
    std::vector<Tensor<Real>> cls(B, class_token_);
    std::vector<Tensor<Real>> parts{g.concat(cls, 0), x};
    x = g.concat(parts, 1);
  }
  for (const auto& layer : specific_encoder_)
    x = encoder_forward(g, x, layer, config_.dropout, train, rng, trace ? &trace->specific_attention : nullptr);
  if (config_.class_token == ClassTokenPolicy::mean) return g.mean(x, 1);
  return g.reshape(g.slice(x, 1, 0, 1), {B, ds});
}

template <typename Real>
Tensor<Real> Model<Real>::generic_forward(Graph<Real>& g, Batch batch, bool train, ad::Rng& rng,
                                          ForwardTrace<Real>* trace) {
  SF_REQUIRE(!batch.empty(), "forward: empty batch");
  const std::size_t B = batch.size(), V = config_.num_variables, T = config_.series_length, dg = config_.d_gen;
  std::vector<Real> raw;
  raw.reserve(B * V * T);
  for (const auto* s : batch) {
    SF_REQUIRE(s->num_variables() == V, "generic branch: series has " + std::to_string(s->num_variables()) +
                                            " variables, model expects " + std::to_string(V));
    SF_REQUIRE(s->length() == T, "generic branch: series length mismatch");
    raw.insert(raw.end(), s->values().begin(), s->values().end());
  }
  Tensor<Real> x({B, 1, V, T}, std::move(raw));
  auto& p = generic_;
  auto h = g.conv2d(x, p.conv1_w, p.conv1_b, ad::Padding::same, ad::Padding::same);  // (B, dg, V, T)
  h = g.gelu(g.batch_norm(h, p.bn1_gamma, p.bn1_beta, p.bn1_mean, p.bn1_var, train));
  h = g.conv2d(h, p.conv2_w, p.conv2_b, ad::Padding::valid, ad::Padding::same);  // (B, dg, 1, T)
  h = g.gelu(g.batch_norm(h, p.bn2_gamma, p.bn2_beta, p.bn2_mean, p.bn2_var, train));
  auto tokens = g.permute(g.reshape(h, {B, dg, T}), {0, 2, 1});  // (B, T, dg)
  tokens = g.add(tokens, p.position);
  for (const auto& layer : generic_encoder_)
    tokens = encoder_forward(g, tokens, layer, config_.dropout, train, rng, trace ? &trace->generic_attention : nullptr);
  return g.mean(tokens, 1);
}

template <typename Real>
Tensor<Real> Model<Real>::forward(Graph<Real>& g, Batch batch, bool train, ad::Rng& rng, ForwardTrace<Real>* trace) {
  auto zs = class_specific_forward(g, batch, train, rng, trace);
  auto zg = generic_forward(g, batch, train, rng, trace);
  std::vector<Tensor<Real>> parts{zs, zg};
  auto z = g.concat(parts, 1);
  if (trace) trace->fused = z;
  return g.linear(z, head_w_, head_b_);
}

template <typename Real>
std::vector<std::size_t> Model<Real>::predict(Batch batch) {
  Graph<Real> g(false);
  ad::Rng unused(0);
  auto logits = forward(g, batch, false, unused);
  const std::size_t C = config_.num_classes;
  std::vector<std::size_t> out;
  auto d = logits.data();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Real* row = d.data() + b * C;
    out.push_back(static_cast<std::size_t>(std::max_element(row, row + C) - row));
  }
  return out;
}

template <typename To, typename From>
Model<To> model_cast(const Model<From>& model) {
  Model<To> out(model.pool(), model.config(), 0);
  out.restore(model.snapshot());
  return out;
}

template class Model<float>;
template class Model<double>;
template void Model<float>::restore<float>(const std::vector<ad::NamedTensor<float>>&);
template void Model<float>::restore<double>(const std::vector<ad::NamedTensor<double>>&);
template void Model<double>::restore<float>(const std::vector<ad::NamedTensor<float>>&);
template void Model<double>::restore<double>(const std::vector<ad::NamedTensor<double>>&);
template Model<double> model_cast<double, float>(const Model<float>&);
template Model<float> model_cast<float, double>(const Model<double>&);
template Model<double> model_cast<double, double>(const Model<double>&);
template Model<float> model_cast<float, float>(const Model<float>&);
template Tensor<float> encoder_forward<float>(Graph<float>&, const Tensor<float>&, const EncoderParams<float>&, double,
                                              bool, ad::Rng&, std::vector<Tensor<float>>*);
template Tensor<double> encoder_forward<double>(Graph<double>&, const Tensor<double>&, const EncoderParams<double>&,
                                                double, bool, ad::Rng&, std::vector<Tensor<double>>*);

}  // namespace shapeformer
