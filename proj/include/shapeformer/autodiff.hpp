#pragma once

// Reverse-mode differentiation over dense row-major tensors.
//
// A Graph is a tape: every op appends a closure that propagates the output
// gradient into its inputs. Tensors are shared handles; leaf tensors created
// with requires_grad (model parameters) outlive any single graph.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace shapeformer::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename Real>
struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
};

template <typename Real>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<Real> data, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<Real> data() { return impl_->data; }
  std::span<const Real> data() const { return impl_->data; }
  Real item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const Real> grad() const { return impl_->grad; }
  /// Allocates a zero gradient when absent.
  std::span<Real> mutable_grad();
  /// Drops the gradient; a later backward pass that does not reach this
  /// tensor leaves it absent.
  void zero_grad() { impl_->grad.clear(); }

  /// Deep copy of shape and data; the copy has no gradient.
  Tensor clone() const;

  TensorImpl<Real>* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<TensorImpl<Real>>& handle() const noexcept { return impl_; }

 private:
  std::shared_ptr<TensorImpl<Real>> impl_;
};

template <typename Real>
struct NamedTensor {
  std::string name;
  Tensor<Real> tensor;
};

enum class Padding { same, valid };

template <typename Real>
class Graph {
 public:
  /// With `record == false` no backward closures are kept (inference).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return tape_.size(); }

  /// a: (..., m, k). b: (k, n) shared across leading axes, or (..., k, n) with
  /// the same leading axes as a.
  Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);
  /// Swaps the last two axes.
  Tensor<Real> transpose(const Tensor<Real>& a);
  Tensor<Real> permute(const Tensor<Real>& a, const std::vector<std::size_t>& order);
  Tensor<Real> reshape(const Tensor<Real>& a, Shape shape);

  /// Elementwise with numpy-style broadcasting.
  Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
  Tensor<Real> subtract(const Tensor<Real>& a, const Tensor<Real>& b);
  Tensor<Real> multiply(const Tensor<Real>& a, const Tensor<Real>& b);
  Tensor<Real> scale(const Tensor<Real>& a, Real factor);

  Tensor<Real> slice(const Tensor<Real>& a, std::size_t axis, std::size_t start, std::size_t length);
  Tensor<Real> concat(std::span<const Tensor<Real>> parts, std::size_t axis);

  /// x (..., in) times weight (in, out) plus bias (out); bias may be undefined.
  Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias);

  Tensor<Real> softmax(const Tensor<Real>& a, std::size_t axis);
  /// Normalizes over the last axis; gamma/beta have that axis' width.
  Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                          Real eps = Real(1e-5));
  /// Channel axis is 1. In training mode the batch statistics normalize and
  /// the running buffers are updated in place; otherwise the buffers are used.
  Tensor<Real> batch_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                          Tensor<Real>& running_mean, Tensor<Real>& running_var, bool train,
                          Real momentum = Real(0.1), Real eps = Real(1e-5));
  Tensor<Real> gelu(const Tensor<Real>& a);
  /// x (B, Cin, H, W), weight (Cout, Cin, kh, kw), bias (Cout) or undefined.
  Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias, Padding pad_h,
                      Padding pad_w);
  /// Removes `axis`.
  Tensor<Real> mean(const Tensor<Real>& a, std::size_t axis);
  Tensor<Real> sum(const Tensor<Real>& a);
  /// Inverted dropout; identity when !train or rate == 0.
  Tensor<Real> dropout(const Tensor<Real>& a, double rate, bool train, Rng& rng);
  /// Mean negative log-likelihood of `labels` under softmax(logits); logits (B, C).
  Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const std::size_t> labels);

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. One call per graph.
  void backward(const Tensor<Real>& loss);

 private:
  Tensor<Real> output(Shape shape, std::initializer_list<const Tensor<Real>*> inputs);
  void record(const Tensor<Real>& out, std::function<void()> fn);

  bool record_;
  bool backward_done_ = false;
  std::vector<std::function<void()>> tape_;
};

/// Constant rows one_hot(indices[i]) of the given width.
template <typename Real>
Tensor<Real> one_hot(std::span<const std::size_t> indices, std::size_t width);

/// Rectified Adam with decoupled weight decay.
struct RAdamOptions {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

template <typename Real>
class RAdam {
 public:
  RAdam(std::vector<NamedTensor<Real>> params, RAdamOptions options);

  /// Every registered parameter must carry a gradient.
  void step();
  void zero_grad();

  std::uint64_t steps() const noexcept { return step_; }
  const RAdamOptions& options() const noexcept { return options_; }
  const std::vector<NamedTensor<Real>>& params() const noexcept { return params_; }

  /// First/second moment buffers, named "<param>.m" / "<param>.v".
  std::vector<NamedTensor<Real>> state() const;
  void load_state(std::uint64_t steps, const std::vector<NamedTensor<Real>>& moments);

 private:
  std::vector<NamedTensor<Real>> params_;
  std::vector<std::vector<Real>> m_, v_;
  RAdamOptions options_;
  std::uint64_t step_ = 0;
};

}  // namespace shapeformer::ad
