#include "shapeformer/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "shapeformer/error.hpp"

namespace shapeformer::ad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream s;
  s << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) s << (i ? ", " : "") << shape[i];
  s << ')';
  return s.str();
}

// ---------------------------------------------------------------------------
// Tensor

template <typename Real>
Tensor<Real>::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<TensorImpl<Real>>()) {
  impl_->data.assign(ad::numel(shape), Real(0));
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl<Real>>()) {
  SF_REQUIRE(data.size() == ad::numel(shape), "Tensor: " + std::to_string(data.size()) +
                                                  " values do not fill shape " + shape_str(shape));
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename Real>
Real Tensor<Real>::item() const {
  SF_REQUIRE(numel() == 1, "item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename Real>
std::span<Real> Tensor<Real>::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), Real(0));
  return impl_->grad;
}

template <typename Real>
Tensor<Real> Tensor<Real>::clone() const {
  return Tensor(impl_->shape, impl_->data, impl_->requires_grad);
}

template <typename Real>
Tensor<Real> one_hot(std::span<const std::size_t> indices, std::size_t width) {
  Tensor<Real> t({indices.size(), width});
  auto d = t.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    SF_REQUIRE(indices[i] < width, "one_hot: index " + std::to_string(indices[i]) + " >= width " + std::to_string(width));
    d[i * width + indices[i]] = Real(1);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Graph plumbing

namespace {

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapC = Eigen::Map<const Mat<Real>>;
template <typename Real>
using MapM = Eigen::Map<Mat<Real>>;

template <typename Real>
using ImplPtr = std::shared_ptr<TensorImpl<Real>>;

template <typename Real>
std::vector<Real>& grad_of(const ImplPtr<Real>& t) {
  if (t->grad.empty()) t->grad.assign(t->data.size(), Real(0));
  return t->grad;
}

Shape strides_of(const Shape& shape) {
  Shape s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// Strides of `in` when broadcast against `out` (right-aligned, 0 on broadcast axes).
Shape broadcast_strides(const Shape& in, const Shape& out) {
  Shape s(out.size(), 0);
  const Shape own = strides_of(in);
  const std::size_t offset = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) s[offset + i] = in[i] == 1 ? 0 : own[i];
  return s;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i + a.size() >= r ? a[i + a.size() - r] : 1;
    const std::size_t db = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (da != db && da != 1 && db != 1)
      throw ContractViolation(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                              " do not broadcast");
    out[i] = std::max(da, db);
  }
  return out;
}

// Size of the dense trailing block addressed by `s` within `out`, or 0 when
// `s` is not "zeros, then the dense strides of a suffix of out".
std::size_t suffix_block(const Shape& out, const Shape& s) {
  std::size_t expect = 1, d = out.size();
  while (d > 0) {
    if (out[d - 1] == 1) {
      --d;
      continue;
    }
    if (s[d - 1] != expect) break;
    expect *= out[--d];
  }
  for (std::size_t i = 0; i < d; ++i)
    if (s[i] != 0 && out[i] != 1) return 0;
  return expect;
}

// Calls fn(i, ia, ib) over every flat output index with the matching input offsets.
template <typename Fn>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, Fn&& fn) {
  const std::size_t n = numel(out);
  const std::size_t r = out.size();
  if (n == 0) return;
  const std::size_t ba = suffix_block(out, sa), bb = suffix_block(out, sb);
  if (ba == n && bb != 0) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i % bb);
    return;
  }
  if (bb == n && ba != 0) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i % ba, i);
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out[d]) {
        ia += sa[d];
        ib += sb[d];
        break;
      }
      ia -= sa[d] * (out[d] - 1);
      ib -= sb[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename Real>
Real gelu_value(Real x) {
  return Real(0.5) * x * (Real(1) + std::erf(x * Real(M_SQRT1_2)));
}

template <typename Real>
Real gelu_derivative(Real x) {
  const Real cdf = Real(0.5) * (Real(1) + std::erf(x * Real(M_SQRT1_2)));
  const Real pdf = std::exp(Real(-0.5) * x * x) * Real(0.3989422804014327);
  return cdf + x * pdf;
}

}  // namespace

template <typename Real>
Tensor<Real> Graph<Real>::output(Shape shape, std::initializer_list<const Tensor<Real>*> inputs) {
  bool needs = false;
  if (record_)
    for (auto* t : inputs)
      if (t && t->defined() && t->requires_grad()) needs = true;
  return Tensor<Real>(std::move(shape), needs);
}

template <typename Real>
void Graph<Real>::record(const Tensor<Real>& out, std::function<void()> fn) {
  if (record_ && out.requires_grad()) tape_.push_back(std::move(fn));
}

template <typename Real>
void Graph<Real>::backward(const Tensor<Real>& loss) {
  SF_REQUIRE(record_, "backward: graph was built without recording");
  SF_REQUIRE(!backward_done_, "backward: already called on this graph; run a new forward pass first");
  SF_REQUIRE(loss.numel() == 1, "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  SF_REQUIRE(loss.requires_grad(), "backward: loss does not depend on any parameter");
  backward_done_ = true;
  grad_of(loss.handle())[0] += Real(1);
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  tape_.clear();
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Real>
Tensor<Real> Graph<Real>::matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  SF_REQUIRE(a.rank() >= 2 && b.rank() >= 2, "matmul: operands need rank >= 2, got " + shape_str(a.shape()) +
                                                 " and " + shape_str(b.shape()));
  const std::size_t k = a.shape().back();
  const std::size_t m = a.shape()[a.rank() - 2];
  const bool shared_b = b.rank() == 2;
  SF_REQUIRE(b.shape()[b.rank() - 2] == k, "matmul: inner dimensions differ in " + shape_str(a.shape()) + " x " +
                                               shape_str(b.shape()));
  if (!shared_b)
    SF_REQUIRE(b.rank() == a.rank() && std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()),
               "matmul: batch axes differ in " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t n = b.shape().back();
  Shape out_shape = a.shape();
  out_shape.back() = n;
  auto out = output(out_shape, {&a, &b});
  const std::size_t batches = shared_b ? 1 : a.numel() / (m * k);
  const std::size_t rows = shared_b ? a.numel() / k : m;
  for (std::size_t bi = 0; bi < batches; ++bi) {
    MapM<Real>(out.data().data() + bi * rows * n, rows, n).noalias() =
        MapC<Real>(a.data().data() + bi * rows * k, rows, k) * MapC<Real>(b.data().data() + bi * k * n, k, n);
  }
  record(out, [ai = a.handle(), bi_ = b.handle(), oi = out.handle(), batches, rows, k, n] {
    if (oi->grad.empty()) return;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      MapC<Real> g(oi->grad.data() + bi * rows * n, rows, n);
      if (ai->requires_grad)
        MapM<Real>(grad_of(ai).data() + bi * rows * k, rows, k).noalias() +=
            g * MapC<Real>(bi_->data.data() + bi * k * n, k, n).transpose();
      if (bi_->requires_grad)
        MapM<Real>(grad_of(bi_).data() + bi * k * n, k, n).noalias() +=
            MapC<Real>(ai->data.data() + bi * rows * k, rows, k).transpose() * g;
    }
  });
  return out;
}

template <typename Real>
Tensor<Real> Graph<Real>::permute(const Tensor<Real>& a, const std::vector<std::size_t>& order) {
  const std::size_t r = a.rank();
  SF_REQUIRE(order.size() == r, "permute: order has wrong length for shape " + shape_str(a.shape()));
  std::vector<bool> seen(r, false);
  for (auto o : order) {
    SF_REQUIRE(o < r && !seen[o], "permute: order is not a permutation");
    seen[o] = true;
  }
  Shape out_shape(r);
  const Shape in_strides = strides_of(a.shape());
  Shape gather(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.shape()[order[i]], gather[i] = in_strides[order[i]];
  auto out = output(out_shape, {&a});
  const Shape zero(r, 0);
  auto src = a.data();
  auto dst = out.data();
  for_each_broadcast(out_shape, gather, zero, [&](std::size_t i, std::size_t ia, std::size_t) { dst[i] = src[ia]; });
  record(out, [ai = a.handle(), oi = out.handle(), out_shape, gather, zero] {
    if (oi->grad.empty()) return;
    auto& ga = grad_of(ai);
    for_each_broadcast(out_shape, gather, zero,
                       [&](std::size_t i, std::size_t ia, std::size_t) { ga[ia] += oi->grad[i]; });
  });
  return out;
}

template <typename Real>
Tensor<Real> Graph<Real>::transpose(const Tensor<Real>& a) {
  SF_REQUIRE(a.rank() >= 2, "transpose: rank must be >= 2");
  std::vector<std::size_t> order(a.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[a.rank() - 1], order[a.rank() - 2]);
  return permute(a, order);
}

template <typename Real>
Tensor<Real> Graph<Real>::reshape(const Tensor<Real>& a, Shape shape) {
  SF_REQUIRE(ad::numel(shape) == a.numel(), "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  auto out = output(std::move(shape), {&a});
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  record(out, [ai = a.handle(), oi = out.handle()] {
    if (oi->grad.empty()) return;
    auto& ga = grad_of(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Real>
Tensor<Real> Graph<Real>::add(const Tensor<Real>& a, const Tensor<Real>& b) {
  const Shape shape = broadcast_shape(a.shape(), b.shape(), "add");
  const Shape sa = broadcast_strides(a.shape(), shape), sb = broadcast_strides(b.shape(), shape);
  auto out = output(shape, {&a, &b});
  auto da = a.data(), db = b.data();
  auto o = out.data();
  for_each_broadcast(shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = da[ia] + db[ib]; });
  record(out, [ai = a.handle(), bi = b.handle(), oi = out.handle(), shape, sa, sb] {
    if (oi->grad.empty()) return;
    Real* ga = ai->requires_grad ? grad_of(ai).data() : nullptr;
    Real* gb = bi->requires_grad ? grad_of(bi).data() : nullptr;
    for_each_broadcast(shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += oi->grad[i];
      if (gb) gb[ib] += oi->grad[i];
    });
  });
  return out;
}

template <typename Real>
Tensor<Real> Graph<Real>::subtract(const Tensor<Real>& a, const Tensor<Real>& b) {
  const Shape shape = broadcast_shape(a.shape(), b.shape(), "subtract");
  const Shape sa = broadcast_strides(a.shape(), shape), sb = broadcast_strides(b.shape(), shape);
  auto out = output(shape, {&a, &b});
  auto da = a.data(), db = b.data();
  auto o = out.data();
  for_each_broadcast(shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = da[ia] - db[ib]; });
  record(out, [ai = a.handle(), bi = b.handle(), oi = out.handle(), shape, sa, sb] {
    if (oi->grad.empty()) return;
    Real* ga = ai->requires_grad ? grad_of(ai).data() : nullptr;
    Real* gb = bi->requires_grad ? grad_of(bi).data() : nullptr;
    for_each_broadcast(shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += oi->grad[i];
      if (gb) gb[ib] -= oi->grad[i];
    });
  });
  return out;
}

template <typename Real>
Tensor<Real> Graph<Real>::multiply(const Tensor<Real>& a, const Tensor<Real>& b) {
  const Shape shape = broadcast_shape(a.shape(), b.shape(), "multiply");
  const Shape sa = broadcast_strides(a.shape(), shape), sb = broadcast_strides(b.shape(), shape);
  auto out = output(shape, {&a, &b});
  auto da = a.data(), db = b.data();
  auto o = out.data();
  for_each_broadcast(shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = da[ia] * db[ib]; });
  record(out, [ai = a.handle(), bi = b.handle(), oi = out.handle(), shape, sa, sb] {
    if (oi->grad.empty()) return;
    Real* ga = ai->requires_grad ? grad_of(ai).data() : nullptr;
    Real* gb = bi->requires_grad ? grad_of(bi).data() : nullptr;
    for_each_broadcast(shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += oi->grad[i] * bi->data[ib];
      if (gb) gb[ib] += oi->grad[i] * ai->data[ia];
    });
  });
  return out;
}

template <typename Real>
Tensor<Real> Graph<Real>::scale(const Tensor<Real>& a, Real factor) {
  auto out = output(a.shape(), {&a});
  auto o = out.data();
  auto da = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] * factor;
  record(out, [ai = a.handle(), oi = out.handle(), factor] {
    if (oi->grad.empty()) return;
    auto& ga = grad_of(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i] * factor;
  });
  return out;
}

template <typename Real>
Tensor<Real> Graph<Real>::gelu(const Tensor<Real>& a) {
  auto out = output(a.shape(), {&a});
  auto o = out.data();
  auto da = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = gelu_value(da[i]);
  record(out, [ai = a.handle(), oi = out.handle()] {
    if (oi->grad.empty()) return;
    auto& ga = grad_of(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i] * gelu_derivative(ai->data[i]);
  });
  return out;
}

template <typename Real>
Tensor<Real> Graph<Real>::dropout(const Tensor<Real>& a, double rate, bool train, Rng& rng) {
  SF_REQUIRE(rate >= 0.0 && rate < 1.0, "dropout: rate must lie in [0, 1)");
  if (!train || rate == 0.0) return a;
  const Real keep_scale = Real(1.0 / (1.0 - rate));
  std::vector<Real> mask(a.numel());
  for (auto& m : mask) m = uniform01(rng) >= rate ? keep_scale : Real(0);
  auto out = output(a.shape(), {&a});
  auto o = out.data();
  auto da = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] * mask[i];
  record(out, [ai = a.handle(), oi = out.handle(), mask = std::move(mask)] {
    if (oi->grad.empty()) return;
    auto& ga = grad_of(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i] * mask[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Structural

template <typename Real>
Tensor<Real> Graph<Real>::slice(const Tensor<Real>& a, std::size_t axis, std::size_t start, std::size_t length) {
  SF_REQUIRE(axis < a.rank(), "slice: axis out of range for shape " + shape_str(a.shape()));
  SF_REQUIRE(start + length <= a.shape()[axis] && length > 0,
             "slice: [" + std::to_string(start) + ", " + std::to_string(start + length) + ") outside axis of size " +
                 std::to_string(a.shape()[axis]));
  const auto s = split_axis(a.shape(), axis);
  Shape shape = a.shape();
  shape[axis] = length;
  auto out = output(shape, {&a});
  auto o = out.data();
  auto da = a.data();
  for (std::size_t q = 0; q < s.outer; ++q)
    std::copy_n(da.begin() + static_cast<std::ptrdiff_t>((q * s.n + start) * s.inner), length * s.inner,
                o.begin() + static_cast<std::ptrdiff_t>(q * length * s.inner));
  record(out, [ai = a.handle(), oi = out.handle(), s, start, length] {
    if (oi->grad.empty()) return;
    auto& ga = grad_of(ai);
    for (std::size_t q = 0; q < s.outer; ++q)
      for (std::size_t i = 0; i < length * s.inner; ++i)
        ga[(q * s.n + start) * s.inner + i] += oi->grad[q * length * s.inner + i];
  });
  return out;
}

template <typename Real>
Tensor<Real> Graph<Real>::concat(std::span<const Tensor<Real>> parts, std::size_t axis) {
  SF_REQUIRE(!parts.empty(), "concat: no inputs");
  const Shape& ref = parts.front().shape();
  SF_REQUIRE(axis < ref.size(), "concat: axis out of range");
  Shape shape = ref;
  shape[axis] = 0;
  bool needs = false;
  for (const auto& p : parts) {
    SF_REQUIRE(p.rank() == ref.size(), "concat: rank mismatch " + shape_str(p.shape()) + " vs " + shape_str(ref));
    for (std::size_t d = 0; d < ref.size(); ++d)
      SF_REQUIRE(d == axis || p.shape()[d] == ref[d],
                 "concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(ref));
    shape[axis] += p.shape()[axis];
    needs = needs || p.requires_grad();
  }
  Tensor<Real> out(shape, record_ && needs);
  const auto s = split_axis(shape, axis);
  std::vector<ImplPtr<Real>> handles;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  auto o = out.data();
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis] * s.inner;
    auto dp = p.data();
    for (std::size_t q = 0; q < s.outer; ++q)
      std::copy_n(dp.begin() + static_cast<std::ptrdiff_t>(q * w), w,
                  o.begin() + static_cast<std::ptrdiff_t>(q * s.n * s.inner + offset));
    handles.push_back(p.handle());
    offsets.push_back(offset);
    offset += w;
  }
  record(out, [handles, offsets, oi = out.handle(), s] {
    if (oi->grad.empty()) return;
    for (std::size_t k = 0; k < handles.size(); ++k) {
      const auto& h = handles[k];
      if (!h->requires_grad) continue;
      auto& g = grad_of(h);
      const std::size_t w = g.size() / s.outer;
      for (std::size_t q = 0; q < s.outer; ++q)
        for (std::size_t i = 0; i < w; ++i) g[q * w + i] += oi->grad[q * s.n * s.inner + offsets[k] + i];
    }
  });
  return out;
}

template <typename Real>
Tensor<Real> Graph<Real>::linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  SF_REQUIRE(weight.rank() == 2, "linear: weight must be (in, out), got " + shape_str(weight.shape()));
  SF_REQUIRE(x.shape().back() == weight.shape()[0], "linear: input width " + std::to_string(x.shape().back()) +
                                                        " does not match weight " + shape_str(weight.shape()));
  auto y = matmul(x, weight);
  if (!bias.defined()) return y;
  SF_REQUIRE(bias.numel() == weight.shape()[1], "linear: bias size mismatch");
  return add(y, bias);
}

// ---------------------------------------------------------------------------
// Reductions and normalizations

template <typename Real>
Tensor<Real> Graph<Real>::sum(const Tensor<Real>& a) {
  auto out = output({}, {&a});
  Real s = 0;
  for (Real v : a.data()) s += v;
  out.data()[0] = s;
  record(out, [ai = a.handle(), oi = out.handle()] {
    if (oi->grad.empty()) return;
    auto& ga = grad_of(ai);
    for (auto& g : ga) g += oi->grad[0];
  });
  return out;
}

template <typename Real>
Tensor<Real> Graph<Real>::mean(const Tensor<Real>& a, std::size_t axis) {
  SF_REQUIRE(axis < a.rank(), "mean: axis out of range for shape " + shape_str(a.shape()));
  const auto s = split_axis(a.shape(), axis);
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  auto out = output(shape, {&a});
  auto o = out.data();
  auto da = a.data();
  const Real inv = Real(1) / Real(s.n);
  for (std::size_t q = 0; q < s.outer; ++q)
    for (std::size_t k = 0; k < s.n; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) o[q * s.inner + i] += da[(q * s.n + k) * s.inner + i] * inv;
  record(out, [ai = a.handle(), oi = out.handle(), s, inv] {
    if (oi->grad.empty()) return;
    auto& ga = grad_of(ai);
    for (std::size_t q = 0; q < s.outer; ++q)
      for (std::size_t k = 0; k < s.n; ++k)
        for (std::size_t i = 0; i < s.inner; ++i) ga[(q * s.n + k) * s.inner + i] += oi->grad[q * s.inner + i] * inv;
  });
  return out;
}

template <typename Real>
Tensor<Real> Graph<Real>::softmax(const Tensor<Real>& a, std::size_t axis) {
  SF_REQUIRE(axis < a.rank(), "softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_str(a.shape()));
  const auto s = split_axis(a.shape(), axis);
  auto out = output(a.shape(), {&a});
  auto o = out.data();
  auto da = a.data();
  for (std::size_t q = 0; q < s.outer; ++q)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = q * s.n * s.inner + i;
      Real mx = da[base];
      for (std::size_t k = 1; k < s.n; ++k) mx = std::max(mx, da[base + k * s.inner]);
      Real z = 0;
      for (std::size_t k = 0; k < s.n; ++k) z += (o[base + k * s.inner] = std::exp(da[base + k * s.inner] - mx));
      for (std::size_t k = 0; k < s.n; ++k) o[base + k * s.inner] /= z;
    }
  record(out, [ai = a.handle(), oi = out.handle(), s] {
    if (oi->grad.empty()) return;
    auto& ga = grad_of(ai);
    const auto& y = oi->data;
    const auto& g = oi->grad;
    for (std::size_t q = 0; q < s.outer; ++q)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = q * s.n * s.inner + i;
        Real dot = 0;
        for (std::size_t k = 0; k < s.n; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t j = base + k * s.inner;
          ga[j] += y[j] * (g[j] - dot);
        }
      }
  });
  return out;
}

template <typename Real>
Tensor<Real> Graph<Real>::layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                                     Real eps) {
  const std::size_t D = x.shape().back();
  SF_REQUIRE(gamma.numel() == D && beta.numel() == D,
             "layer_norm: gamma/beta width must equal last axis of " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / D;
  auto out = Graph::output(x.shape(), {&x, &gamma, &beta});
  std::vector<Real> xhat(x.numel()), rstd(rows);
  auto dx = x.data();
  auto o = out.data();
  auto gm = gamma.data(), bt = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = dx.data() + r * D;
    Real mu = 0;
    for (std::size_t i = 0; i < D; ++i) mu += row[i];
    mu /= Real(D);
    Real var = 0;
    for (std::size_t i = 0; i < D; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= Real(D);
    rstd[r] = Real(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < D; ++i) {
      xhat[r * D + i] = (row[i] - mu) * rstd[r];
      o[r * D + i] = xhat[r * D + i] * gm[i] + bt[i];
    }
  }
  record(out, [xi = x.handle(), gi = gamma.handle(), bi = beta.handle(), oi = out.handle(), xhat = std::move(xhat),
                rstd = std::move(rstd), rows, D] {
    if (oi->grad.empty()) return;
    const auto& g = oi->grad;
    if (gi->requires_grad || bi->requires_grad) {
      auto& gg = grad_of(gi);
      auto& gb = grad_of(bi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < D; ++i) {
          gg[i] += g[r * D + i] * xhat[r * D + i];
          gb[i] += g[r * D + i];
        }
    }
    if (!xi->requires_grad) return;
    auto& gx = grad_of(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      Real mean_d = 0, mean_dx = 0;
      for (std::size_t i = 0; i < D; ++i) {
        const Real d = g[r * D + i] * gi->data[i];
        mean_d += d;
        mean_dx += d * xhat[r * D + i];
      }
      mean_d /= Real(D);
      mean_dx /= Real(D);
      for (std::size_t i = 0; i < D; ++i) {
        const Real d = g[r * D + i] * gi->data[i];
        gx[r * D + i] += rstd[r] * (d - mean_d - xhat[r * D + i] * mean_dx);
      }
    }
  });
  return out;
}

template <typename Real>
Tensor<Real> Graph<Real>::batch_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                                     Tensor<Real>& running_mean, Tensor<Real>& running_var, bool train, Real momentum,
                                     Real eps) {
  SF_REQUIRE(x.rank() >= 2, "batch_norm: input needs a channel axis, got " + shape_str(x.shape()));
  const std::size_t B = x.shape()[0], C = x.shape()[1];
  const std::size_t inner = x.numel() / (B * C);
  SF_REQUIRE(gamma.numel() == C && beta.numel() == C && running_mean.numel() == C && running_var.numel() == C,
             "batch_norm: per-channel parameters must have " + std::to_string(C) + " entries");
  const std::size_t count = B * inner;
  if (train) SF_REQUIRE(count > 1, "batch_norm: training mode needs more than one value per channel");
  auto out = output(x.shape(), {&x, &gamma, &beta});
  std::vector<Real> xhat(x.numel()), rstd(C);
  auto dx = x.data();
  auto o = out.data();
  auto at = [&](std::size_t b, std::size_t c, std::size_t i) { return (b * C + c) * inner + i; };
  for (std::size_t c = 0; c < C; ++c) {
    Real mu, var;
    if (train) {
      mu = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < inner; ++i) mu += dx[at(b, c, i)];
      mu /= Real(count);
      var = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < inner; ++i) var += (dx[at(b, c, i)] - mu) * (dx[at(b, c, i)] - mu);
      var /= Real(count);
      running_mean.data()[c] = (Real(1) - momentum) * running_mean.data()[c] + momentum * mu;
      running_var.data()[c] =
          (Real(1) - momentum) * running_var.data()[c] + momentum * var * Real(count) / Real(count - 1);
    } else {
      mu = running_mean.data()[c];
      var = running_var.data()[c];
    }
    rstd[c] = Real(1) / std::sqrt(var + eps);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < inner; ++i) {
        const auto j = at(b, c, i);
        xhat[j] = (dx[j] - mu) * rstd[c];
        o[j] = xhat[j] * gamma.data()[c] + beta.data()[c];
      }
  }
  record(out, [xi = x.handle(), gi = gamma.handle(), bi = beta.handle(), oi = out.handle(), xhat = std::move(xhat),
                rstd = std::move(rstd), B, C, inner, count, train] {
    if (oi->grad.empty()) return;
    const auto& g = oi->grad;
    auto at = [&](std::size_t b, std::size_t c, std::size_t i) { return (b * C + c) * inner + i; };
    for (std::size_t c = 0; c < C; ++c) {
      Real sum_g = 0, sum_gx = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < inner; ++i) {
          sum_g += g[at(b, c, i)];
          sum_gx += g[at(b, c, i)] * xhat[at(b, c, i)];
        }
      if (gi->requires_grad) grad_of(gi)[c] += sum_gx;
      if (bi->requires_grad) grad_of(bi)[c] += sum_g;
      if (!xi->requires_grad) continue;
      auto& gx = grad_of(xi);
      const Real scale = gi->data[c] * rstd[c];
      if (train) {
        const Real mg = sum_g / Real(count), mgx = sum_gx / Real(count);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < inner; ++i) {
            const auto j = at(b, c, i);
            gx[j] += scale * (g[j] - mg - xhat[j] * mgx);
          }
      } else {
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < inner; ++i) gx[at(b, c, i)] += scale * g[at(b, c, i)];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolution

template <typename Real>
Tensor<Real> Graph<Real>::conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                                 Padding pad_h, Padding pad_w) {
  SF_REQUIRE(x.rank() == 4 && weight.rank() == 4,
             "conv2d: expected x (B,C,H,W) and weight (O,C,kh,kw), got " + shape_str(x.shape()) + " and " +
                 shape_str(weight.shape()));
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
  SF_REQUIRE(weight.dim(1) == Ci, "conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, got " +
                                      std::to_string(Ci));
  if (bias.defined()) SF_REQUIRE(bias.numel() == Co, "conv2d: bias size mismatch");
  const std::size_t ph = pad_h == Padding::same ? (KH - 1) / 2 : 0;
  const std::size_t pw = pad_w == Padding::same ? (KW - 1) / 2 : 0;
  const std::size_t Ho = pad_h == Padding::same ? H : (H >= KH ? H - KH + 1 : 0);
  const std::size_t Wo = pad_w == Padding::same ? W : (W >= KW ? W - KW + 1 : 0);
  SF_REQUIRE(Ho > 0 && Wo > 0, "conv2d: kernel larger than input under valid padding");
  auto out = output({B, Co, Ho, Wo}, {&x, &weight, &bias});

  struct Geometry {
    std::size_t B, Ci, H, W, Co, KH, KW, ph, pw, Ho, Wo;
  } geo{B, Ci, H, W, Co, KH, KW, ph, pw, Ho, Wo};

  // Visits every (output row segment, input row segment, weight) triple where
  // the kernel tap overlaps the input; fn(out_offset, in_offset, w_index, len).
  auto sweep = [](const Geometry& g, auto&& fn) {
    for (std::size_t b = 0; b < g.B; ++b)
      for (std::size_t co = 0; co < g.Co; ++co)
        for (std::size_t ci = 0; ci < g.Ci; ++ci)
          for (std::size_t i = 0; i < g.KH; ++i)
            for (std::size_t j = 0; j < g.KW; ++j) {
              const std::size_t widx = ((co * g.Ci + ci) * g.KH + i) * g.KW + j;
              // output column ow reads input column ow + j - pw
              const std::size_t ow_lo = j < g.pw ? g.pw - j : 0;
              const std::size_t ow_hi = std::min(g.Wo, g.W + g.pw - j);  // exclusive
              if (ow_lo >= ow_hi) continue;
              for (std::size_t oh = 0; oh < g.Ho; ++oh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + i) - static_cast<std::ptrdiff_t>(g.ph);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.H)) continue;
                const std::size_t o_off = ((b * g.Co + co) * g.Ho + oh) * g.Wo + ow_lo;
                const std::size_t x_off = ((b * g.Ci + ci) * g.H + static_cast<std::size_t>(ih)) * g.W + ow_lo + j - g.pw;
                fn(o_off, x_off, widx, ow_hi - ow_lo);
              }
            }
  };

  auto o = out.data();
  auto dx = x.data();
  auto dw = weight.data();
  if (bias.defined())
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t co = 0; co < Co; ++co)
        std::fill_n(o.begin() + static_cast<std::ptrdiff_t>((b * Co + co) * Ho * Wo), Ho * Wo, bias.data()[co]);
  sweep(geo, [&](std::size_t oo, std::size_t xo, std::size_t wi, std::size_t len) {
    const Real w = dw[wi];
    Real* op = o.data() + oo;
    const Real* xp = dx.data() + xo;
    for (std::size_t t = 0; t < len; ++t) op[t] += w * xp[t];
  });
  record(out, [xi = x.handle(), wi_ = weight.handle(), bi = bias.defined() ? bias.handle() : nullptr,
                oi = out.handle(), geo, sweep] {
    if (oi->grad.empty()) return;
    const Real* g = oi->grad.data();
    Real* gx = xi->requires_grad ? grad_of(xi).data() : nullptr;
    Real* gw = wi_->requires_grad ? grad_of(wi_).data() : nullptr;
    sweep(geo, [&](std::size_t oo, std::size_t xo, std::size_t widx, std::size_t len) {
      const Real* gp = g + oo;
      if (gx) {
        const Real w = wi_->data[widx];
        Real* xp = gx + xo;
        for (std::size_t t = 0; t < len; ++t) xp[t] += w * gp[t];
      }
      if (gw) {
        const Real* xp = xi->data.data() + xo;
        Real acc = 0;
        for (std::size_t t = 0; t < len; ++t) acc += gp[t] * xp[t];
        gw[widx] += acc;
      }
    });
    if (bi && bi->requires_grad) {
      auto& gb = grad_of(bi);
      const std::size_t plane = geo.Ho * geo.Wo;
      for (std::size_t b = 0; b < geo.B; ++b)
        for (std::size_t co = 0; co < geo.Co; ++co)
          for (std::size_t t = 0; t < plane; ++t) gb[co] += g[(b * geo.Co + co) * plane + t];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Loss

template <typename Real>
Tensor<Real> Graph<Real>::cross_entropy(const Tensor<Real>& logits, std::span<const std::size_t> labels) {
  SF_REQUIRE(logits.rank() == 2, "cross_entropy: logits must be (B, C), got " + shape_str(logits.shape()));
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  SF_REQUIRE(labels.size() == B, "cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                                     std::to_string(B));
  auto out = output({}, {&logits});
  std::vector<Real> probs(B * C);
  auto z = logits.data();
  Real total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    SF_REQUIRE(labels[b] < C, "cross_entropy: label out of range");
    const Real* row = z.data() + b * C;
    const Real mx = *std::max_element(row, row + C);
    Real s = 0;
    for (std::size_t c = 0; c < C; ++c) s += (probs[b * C + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < C; ++c) probs[b * C + c] /= s;
    total += (mx + std::log(s)) - row[labels[b]];
  }
  out.data()[0] = total / Real(B);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  record(out, [li = logits.handle(), oi = out.handle(), probs = std::move(probs), lab = std::move(lab), B, C] {
    if (oi->grad.empty()) return;
    auto& gl = grad_of(li);
    const Real scale = oi->grad[0] / Real(B);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        gl[b * C + c] += scale * (probs[b * C + c] - (c == lab[b] ? Real(1) : Real(0)));
  });
  return out;
}

// ---------------------------------------------------------------------------
// RAdam

template <typename Real>
RAdam<Real>::RAdam(std::vector<NamedTensor<Real>> params, RAdamOptions options)
    : params_(std::move(params)), options_(options) {
  SF_REQUIRE(options_.lr > 0.0, "RAdam: learning rate must be positive");
  SF_REQUIRE(options_.beta1 >= 0.0 && options_.beta1 < 1.0 && options_.beta2 >= 0.0 && options_.beta2 < 1.0,
             "RAdam: betas must lie in [0, 1)");
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), Real(0));
    v_.emplace_back(p.tensor.numel(), Real(0));
  }
}

template <typename Real>
void RAdam<Real>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename Real>
void RAdam<Real>::step() {
  for (const auto& p : params_)
    SF_REQUIRE(p.tensor.has_grad(), "RAdam: parameter '" + p.name + "' has no gradient");
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(b1, t);
  const double bc2 = 1.0 - std::pow(b2, t);
  const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  const double rho_t = rho_inf - 2.0 * t * std::pow(b2, t) / bc2;
  const bool rectify = rho_t > 5.0;
  const double rect = rectify ? std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                                          ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                              : 0.0;
  const double decay = 1.0 - options_.lr * options_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto w = params_[k].tensor.data();
    auto g = params_[k].tensor.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      double wi = static_cast<double>(w[i]) * decay;
      const double m_hat = mi / bc1;
      if (rectify)
        wi -= options_.lr * m_hat * rect * std::sqrt(bc2) / (std::sqrt(vi) + options_.eps);
      else
        wi -= options_.lr * m_hat;
      w[i] = static_cast<Real>(wi);
    }
  }
}

template <typename Real>
std::vector<NamedTensor<Real>> RAdam<Real>::state() const {
  std::vector<NamedTensor<Real>> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out.push_back({params_[k].name + ".m", Tensor<Real>(params_[k].tensor.shape(), m_[k])});
    out.push_back({params_[k].name + ".v", Tensor<Real>(params_[k].tensor.shape(), v_[k])});
  }
  return out;
}

template <typename Real>
void RAdam<Real>::load_state(std::uint64_t steps, const std::vector<NamedTensor<Real>>& moments) {
  SF_REQUIRE(moments.size() == 2 * params_.size(), "RAdam: optimizer state has the wrong number of buffers");
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& m = moments[2 * k];
    const auto& v = moments[2 * k + 1];
    SF_REQUIRE(m.name == params_[k].name + ".m" && v.name == params_[k].name + ".v",
               "RAdam: optimizer state for '" + params_[k].name + "' is missing or out of order");
    SF_REQUIRE(m.tensor.numel() == params_[k].tensor.numel() && v.tensor.numel() == params_[k].tensor.numel(),
               "RAdam: optimizer state shape mismatch for '" + params_[k].name + "'");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    m_[k].assign(moments[2 * k].tensor.data().begin(), moments[2 * k].tensor.data().end());
    v_[k].assign(moments[2 * k + 1].tensor.data().begin(), moments[2 * k + 1].tensor.data().end());
  }
  step_ = steps;
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;
template class RAdam<float>;
template class RAdam<double>;
template Tensor<float> one_hot<float>(std::span<const std::size_t>, std::size_t);
template Tensor<double> one_hot<double>(std::span<const std::size_t>, std::size_t);

}  // namespace shapeformer::ad
