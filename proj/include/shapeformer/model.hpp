#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shapeformer/autodiff.hpp"
#include "shapeformer/data_io.hpp"
#include "shapeformer/discovery.hpp"

namespace shapeformer {

/// How the class-specific branch reduces its token sequence to one vector.
enum class ClassTokenPolicy { first, mean, learnable };
/// Which span feeds the start/end position embeddings of a difference token.
enum class PositionSource { shapelet, best_fit };

std::string to_string(ClassTokenPolicy p);
std::string to_string(PositionSource p);
ClassTokenPolicy class_token_policy_from(const std::string& s);
PositionSource position_source_from(const std::string& s);

struct ModelConfig {
  std::size_t num_variables = 0;
  std::size_t series_length = 0;
  std::size_t num_classes = 0;
  std::size_t d_spe = 128;
  std::size_t d_gen = 32;
  std::size_t heads = 16;
  std::size_t encoder_layers = 1;
  std::size_t ff_multiplier = 4;
  std::size_t conv_kernel = 8;
  std::size_t window = 100;
  double dropout = 0.4;
  ClassTokenPolicy class_token = ClassTokenPolicy::first;
  PositionSource position_source = PositionSource::shapelet;
};

struct BestFit {
  std::size_t index = 0;
  double distance = 0.0;
  std::vector<double> subsequence;
};

/// Minimum-CID window of `series[variable]` whose start lies within `window`
/// of `start` (clamped to the valid range); the smallest offset wins ties.
BestFit find_best_fit(const TimeSeries& series, std::span<const double> shapelet, std::size_t variable,
                      std::size_t start, std::size_t window);

template <typename Real>
struct EncoderParams {
  std::size_t width = 0;
  std::size_t heads = 1;
  ad::Tensor<Real> wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Tensor<Real> ln1_gamma, ln1_beta;
  ad::Tensor<Real> ff1_w, ff1_b, ff2_w, ff2_b;
  ad::Tensor<Real> ln2_gamma, ln2_beta;
};

/// One post-norm transformer layer over x (B, n, width): multi-head
/// self-attention, residual + layer norm, GELU feed-forward, residual + layer
/// norm. Row-stochastic attention weights (B, heads, n, n) are appended to
/// `attention` when given.
template <typename Real>
ad::Tensor<Real> encoder_forward(ad::Graph<Real>& graph, const ad::Tensor<Real>& x, const EncoderParams<Real>& p,
                                 double dropout, bool train, ad::Rng& rng,
                                 std::vector<ad::Tensor<Real>>* attention = nullptr);

/// Per-shapelet learnable state. Spans and variable are fixed at construction.
template <typename Real>
struct ShapeletSlot {
  std::size_t variable = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  ad::Tensor<Real> values;  ///< (1, l)
  ad::Tensor<Real> proj_i_w, proj_i_b, proj_s_w, proj_s_b;
};

template <typename Real>
struct ShapeletFilterParams {
  std::vector<ShapeletSlot<Real>> slots;
  ad::Tensor<Real> pe_start_w, pe_start_b;  ///< one-hot over T + 1 start/end indices
  ad::Tensor<Real> pe_end_w, pe_end_b;
  ad::Tensor<Real> pe_var_w, pe_var_b;      ///< one-hot over V
};

template <typename Real>
struct GenericBranchParams {
  ad::Tensor<Real> conv1_w, conv1_b, bn1_gamma, bn1_beta, bn1_mean, bn1_var;
  ad::Tensor<Real> conv2_w, conv2_b, bn2_gamma, bn2_beta, bn2_mean, bn2_var;
  ad::Tensor<Real> position;  ///< (T, d_gen)
};

/// Intermediate values captured during a forward pass.
template <typename Real>
struct ForwardTrace {
  std::vector<ad::Tensor<Real>> specific_attention;  ///< per layer, (B, h, n, n)
  std::vector<ad::Tensor<Real>> generic_attention;
  ad::Tensor<Real> fused;                            ///< (B, d_spe + d_gen)
  std::vector<std::vector<std::size_t>> best_fit;    ///< [instance][shapelet] window offset
};

using Batch = std::span<const TimeSeries* const>;

template <typename Real>
class Model {
 public:
  Model(const ShapeletPool& pool, ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  const ShapeletPool& pool() const noexcept { return pool_; }
  std::size_t num_shapelets() const noexcept { return filter_.slots.size(); }

  /// Trainable tensors in a fixed order.
  const std::vector<ad::NamedTensor<Real>>& parameters() const noexcept { return parameters_; }
  /// Batch-norm running statistics.
  const std::vector<ad::NamedTensor<Real>>& buffers() const noexcept { return buffers_; }
  std::size_t parameter_count() const;

  /// Parameters then buffers, deep-copied.
  std::vector<ad::NamedTensor<Real>> snapshot() const;
  /// Restores a snapshot (any scalar type); every name must match.
  template <typename Other>
  void restore(const std::vector<ad::NamedTensor<Other>>& state);

  /// Difference tokens U (B, g, d_spe) including position embeddings.
  ad::Tensor<Real> difference_tokens(ad::Graph<Real>& graph, Batch batch, ForwardTrace<Real>* trace = nullptr) const;
  /// Class-specific class token (B, d_spe).
  ad::Tensor<Real> class_specific_forward(ad::Graph<Real>& graph, Batch batch, bool train, ad::Rng& rng,
                                          ForwardTrace<Real>* trace = nullptr) const;
  /// Generic class token (B, d_gen).
  ad::Tensor<Real> generic_forward(ad::Graph<Real>& graph, Batch batch, bool train, ad::Rng& rng,
                                   ForwardTrace<Real>* trace = nullptr);
  /// Logits (B, |Y|).
  ad::Tensor<Real> forward(ad::Graph<Real>& graph, Batch batch, bool train, ad::Rng& rng,
                           ForwardTrace<Real>* trace = nullptr);

  /// Eval-mode argmax of the logits.
  std::vector<std::size_t> predict(Batch batch);

  ShapeletFilterParams<Real>& filter() noexcept { return filter_; }
  std::vector<EncoderParams<Real>>& specific_encoder() noexcept { return specific_encoder_; }
  std::vector<EncoderParams<Real>>& generic_encoder() noexcept { return generic_encoder_; }
  GenericBranchParams<Real>& generic() noexcept { return generic_; }

 private:
  ad::Tensor<Real> param(const std::string& name, ad::Shape shape, double bound, ad::Rng& rng);
  ad::Tensor<Real> constant_param(const std::string& name, ad::Shape shape, Real value);
  ad::Tensor<Real> buffer(const std::string& name, ad::Shape shape, Real value);
  EncoderParams<Real> make_encoder(const std::string& prefix, std::size_t width, ad::Rng& rng);

  ShapeletPool pool_;
  ModelConfig config_;
  ShapeletFilterParams<Real> filter_;
  std::vector<EncoderParams<Real>> specific_encoder_;
  std::vector<EncoderParams<Real>> generic_encoder_;
  GenericBranchParams<Real> generic_;
  ad::Tensor<Real> class_token_;  ///< (1, 1, d_spe), learnable policy only
  ad::Tensor<Real> head_w_, head_b_;
  std::vector<ad::NamedTensor<Real>> parameters_;
  std::vector<ad::NamedTensor<Real>> buffers_;
};

/// Same architecture and weights in another scalar type.
template <typename To, typename From>
Model<To> model_cast(const Model<From>& model);

/// Pointers to the series of the given dataset instances.
std::vector<const TimeSeries*> batch_of(const Dataset& dataset, std::span<const std::size_t> indices);

}  // namespace shapeformer
