#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// Ops record backward closures onto the thread-local active TapeT<S> (see
// TapeScopeT). With no active tape they are plain forward math, which is what
// inference uses. Scalar type is a template parameter: float for training,
// double for finite-difference verification.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tacoforge/errors.hpp"
#include "tacoforge/rng.hpp"

namespace tacoforge {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += "x";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

template <class S>
struct TensorDataT {
  Shape shape;
  std::vector<S> values;
  std::vector<S> grad;  // same length as values iff requires_grad
  bool requires_grad = false;
};

template <class S>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    TensorT t;
    t.data_ = std::make_shared<TensorDataT<S>>();
    t.data_->shape = std::move(shape);
    t.data_->values.assign(static_cast<size_t>(shape_numel(t.data_->shape)), S(0));
    t.set_requires_grad(requires_grad);
    return t;
  }

  static TensorT full(Shape shape, S value) {
    TensorT t = zeros(std::move(shape));
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
  }

  static TensorT from(Shape shape, std::vector<S> values, bool requires_grad = false) {
    TACO_CHECK(shape_numel(shape) == static_cast<int64_t>(values.size()),
               "tensor data length ", values.size(), " does not match shape ", shape_str(shape));
    TensorT t;
    t.data_ = std::make_shared<TensorDataT<S>>();
    t.data_->shape = std::move(shape);
    t.data_->values = std::move(values);
    t.set_requires_grad(requires_grad);
    return t;
  }

  static TensorT scalar(S value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  int64_t rank() const { return static_cast<int64_t>(data_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(data_->values.size()); }
  int64_t dim(int i) const {
    int n = static_cast<int>(data_->shape.size());
    if (i < 0) i += n;
    return data_->shape[static_cast<size_t>(i)];
  }

  // Handles have shared-storage semantics: a const handle still exposes
  // mutable storage, mirroring how copies alias the same data.
  std::vector<S>& values() const { return data_->values; }
  std::vector<S>& grad() const { return data_->grad; }
  S item() const {
    TACO_CHECK(size() == 1, "item() on non-scalar tensor ", shape_str(shape()));
    return data_->values[0];
  }

  bool requires_grad() const { return data_ && data_->requires_grad; }
  void set_requires_grad(bool rg) {
    data_->requires_grad = rg;
    if (rg)
      data_->grad.assign(data_->values.size(), S(0));
    else
      data_->grad.clear();
  }
  void zero_grad() {
    if (requires_grad()) std::fill(data_->grad.begin(), data_->grad.end(), S(0));
  }

  // Identity of the underlying storage; used to detect aliasing.
  const void* id() const { return data_.get(); }

  bool all_finite() const {
    for (S x : data_->values)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

 private:
  std::shared_ptr<TensorDataT<S>> data_;
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <class S>
class TapeT {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded op's backward rule
  // exactly once, in reverse topological order. Fan-out accumulates because
  // rules add into .grad.
  void backward(TensorT<S>& loss) {
    TACO_CHECK(loss.size() == 1, "backward requires a scalar loss, got ", shape_str(loss.shape()));
    TACO_CHECK(loss.requires_grad(), "backward target does not require grad");
    loss.grad()[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  static TapeT*& active() {
    thread_local TapeT* t = nullptr;
    return t;
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

template <class S>
class TapeScopeT {
 public:
  explicit TapeScopeT(TapeT<S>& tape) : prev_(TapeT<S>::active()) { TapeT<S>::active() = &tape; }
  ~TapeScopeT() { TapeT<S>::active() = prev_; }
  TapeScopeT(const TapeScopeT&) = delete;
  TapeScopeT& operator=(const TapeScopeT&) = delete;

 private:
  TapeT<S>* prev_;
};

namespace detail {

// Returns true when the op should be recorded, and marks the output as
// requiring grad.
template <class S, class... Ts>
bool track(TensorT<S>& out, const Ts&... inputs) {
  bool any = (... || inputs.requires_grad());
  if (any && TapeT<S>::active() != nullptr) {
    out.set_requires_grad(true);
    return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// GEMM kernels. Accumulation order per output element is fixed, so results
// are bit-identical across runs.
// ---------------------------------------------------------------------------

// C[m,n] += A[m,k] * B[k,n]
template <class S>
void gemm_nn_acc(int64_t m, int64_t k, int64_t n, const S* __restrict a, const S* __restrict b,
                 S* __restrict c) {
  for (int64_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T. B is transposed into scratch so the
// vector-friendly nn kernel does the work; accumulation order stays fixed.
template <class S>
void gemm_nt_acc(int64_t m, int64_t k, int64_t n, const S* __restrict a, const S* __restrict b,
                 S* __restrict c) {
  std::vector<S> bt(static_cast<size_t>(k * n));
  for (int64_t j = 0; j < n; ++j)
    for (int64_t p = 0; p < k; ++p) bt[static_cast<size_t>(p * n + j)] = b[j * k + p];
  gemm_nn_acc(m, k, n, a, bt.data(), c);
}

// C[m,n] += A[k,m]^T * B[k,n]
template <class S>
void gemm_tn_acc(int64_t m, int64_t k, int64_t n, const S* __restrict a, const S* __restrict b,
                 S* __restrict c) {
  for (int64_t p = 0; p < k; ++p) {
    const S* arow = a + p * m;
    const S* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const S av = arow[i];
      S* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Broadcasting helpers (NumPy right-aligned rules).
// ---------------------------------------------------------------------------

constexpr int kMaxRank = 8;

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t ra = a.size(), rb = b.size();
  size_t r = std::max(ra, rb);
  TACO_CHECK(r <= kMaxRank, "rank too large for broadcasting");
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
    int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
    TACO_CHECK(da == db || da == 1 || db == 1, "cannot broadcast ", shape_str(a), " with ",
               shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `shape` viewed as broadcast to `out` (0 stride on expanded dims).
inline std::array<int64_t, kMaxRank> broadcast_strides(const Shape& shape, const Shape& out) {
  std::array<int64_t, kMaxRank> st{};
  size_t r = out.size(), rs = shape.size();
  int64_t stride = 1;
  std::vector<int64_t> own(rs);
  for (size_t i = rs; i-- > 0;) {
    own[i] = stride;
    stride *= shape[i];
  }
  for (size_t i = 0; i < r; ++i) {
    if (i < r - rs)
      st[i] = 0;
    else
      st[i] = shape[i - (r - rs)] == 1 ? 0 : own[i - (r - rs)];
  }
  return st;
}

// Iterates the output index space of `out_shape`, calling fn(out_linear,
// a_linear, b_linear).
template <class Fn>
void for_each_broadcast(const Shape& out_shape, const Shape& ashape, const Shape& bshape, Fn fn) {
  const size_t r = out_shape.size();
  const int64_t n = shape_numel(out_shape);
  auto sa = broadcast_strides(ashape, out_shape);
  auto sb = broadcast_strides(bshape, out_shape);
  std::array<int64_t, kMaxRank> idx{};
  int64_t ia = 0, ib = 0;
  for (int64_t o = 0; o < n; ++o) {
    fn(o, ia, ib);
    for (size_t d = r; d-- > 0;) {
      idx[d]++;
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out_shape[d]) break;
      ia -= sa[d] * out_shape[d];
      ib -= sb[d] * out_shape[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting
// ---------------------------------------------------------------------------

namespace detail {

template <class S, class FwdFn, class BwdFn>
TensorT<S> binary_op(const TensorT<S>& a, const TensorT<S>& b, FwdFn fwd, BwdFn bwd) {
  if (a.shape() == b.shape()) {
    TensorT<S> out = TensorT<S>::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
    if (track(out, a, b)) {
      TapeT<S>::active()->record([a, b, out, bwd]() mutable {
        const auto& g = out.grad();
        const auto& av = a.values();
        const auto& bv = b.values();
        S* ga = a.requires_grad() ? a.grad().data() : nullptr;
        S* gb = b.requires_grad() ? b.grad().data() : nullptr;
        for (size_t i = 0; i < g.size(); ++i) {
          S da, db;
          bwd(av[i], bv[i], g[i], da, db);
          if (ga) ga[i] += da;
          if (gb) gb[i] += db;
        }
      });
    }
    return out;
  }
  Shape os = broadcast_shape(a.shape(), b.shape());
  TensorT<S> out = TensorT<S>::zeros(os);
  {
    const S* av = a.values().data();
    const S* bv = b.values().data();
    S* ov = out.values().data();
    for_each_broadcast(os, a.shape(), b.shape(),
                       [&](int64_t o, int64_t ia, int64_t ib) { ov[o] = fwd(av[ia], bv[ib]); });
  }
  if (track(out, a, b)) {
    TapeT<S>::active()->record([a, b, out, bwd]() mutable {
      const S* av = a.values().data();
      const S* bv = b.values().data();
      const S* g = out.grad().data();
      S* ga = a.requires_grad() ? a.grad().data() : nullptr;
      S* gb = b.requires_grad() ? b.grad().data() : nullptr;
      for_each_broadcast(out.shape(), a.shape(), b.shape(), [&](int64_t o, int64_t ia, int64_t ib) {
        S da, db;
        bwd(av[ia], bv[ib], g[o], da, db);
        if (ga) ga[ia] += da;
        if (gb) gb[ib] += db;
      });
    });
  }
  return out;
}

}  // namespace detail

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x + y; },
      [](S, S, S g, S& da, S& db) {
        da = g;
        db = g;
      });
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x - y; },
      [](S, S, S g, S& da, S& db) {
        da = g;
        db = -g;
      });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x * y; },
      [](S x, S y, S g, S& da, S& db) {
        da = g * y;
        db = g * x;
      });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

// dfn(x, y, g) -> contribution to dx given output y = fn(x) and out-grad g.
template <class S, class FwdFn, class BwdFn>
TensorT<S> unary_op(const TensorT<S>& a, FwdFn fwd, BwdFn bwd) {
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
  if (track(out, a)) {
    TapeT<S>::active()->record([a, out, bwd]() mutable {
      const auto& g = out.grad();
      const auto& av = a.values();
      const auto& ov = out.values();
      S* ga = a.grad().data();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += bwd(av[i], ov[i], g[i]);
    });
  }
  return out;
}

}  // namespace detail

template <class S>
TensorT<S> relu(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S, S g) { return x > S(0) ? g : S(0); });
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return S(1) / (S(1) + std::exp(-x)); },
      [](S, S y, S g) { return g * y * (S(1) - y); });
}

template <class S>
TensorT<S> tanh(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::tanh(x); }, [](S, S y, S g) { return g * (S(1) - y * y); });
}

template <class S>
TensorT<S> abs(const TensorT<S>& a) {
  // Subgradient 0 at x == 0.
  return detail::unary_op(
      a, [](S x) { return x < S(0) ? -x : x; },
      [](S x, S, S g) { return x > S(0) ? g : (x < S(0) ? -g : S(0)); });
}

template <class S>
TensorT<S> sqrt(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::sqrt(x); }, [](S, S y, S g) { return g / (S(2) * y); });
}

template <class S>
TensorT<S> reciprocal(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return S(1) / x; }, [](S, S y, S g) { return -g * y * y; });
}

template <class S>
TensorT<S> neg(const TensorT<S>& a) {
  return detail::unary_op(
      a, [](S x) { return -x; }, [](S, S, S g) { return -g; });
}

template <class S>
TensorT<S> scale(const TensorT<S>& a, S c) {
  return detail::unary_op(
      a, [c](S x) { return c * x; }, [c](S, S, S g) { return c * g; });
}

template <class S>
TensorT<S> add_scalar(const TensorT<S>& a, S c) {
  return detail::unary_op(
      a, [c](S x) { return x + c; }, [](S, S, S g) { return g; });
}

template <class S>
TensorT<S> clamp(const TensorT<S>& a, S lo, S hi) {
  return detail::unary_op(
      a, [lo, hi](S x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](S x, S, S g) { return (x >= lo && x <= hi) ? g : S(0); });
}

// ---------------------------------------------------------------------------
// matmul: a[..., k] x b[k, n] -> [..., n]. Leading axes of `a` are treated as
// one batch axis. b must be rank 2.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  TACO_CHECK(a.rank() >= 1 && b.rank() == 2, "matmul expects a[...,k] and b[k,n], got ",
             shape_str(a.shape()), " and ", shape_str(b.shape()));
  const int64_t k = a.dim(-1);
  TACO_CHECK(k == b.dim(0), "matmul inner dimensions disagree: ", shape_str(a.shape()), " vs ",
             shape_str(b.shape()));
  const int64_t m = a.size() / k;
  const int64_t n = b.dim(1);
  Shape os(a.shape());
  os.back() = n;
  TensorT<S> out = TensorT<S>::zeros(os);
  detail::gemm_nn_acc(m, k, n, a.values().data(), b.values().data(), out.values().data());
  if (detail::track(out, a, b)) {
    TapeT<S>::active()->record([a, b, out, m, k, n]() mutable {
      const S* g = out.grad().data();
      if (a.requires_grad())
        detail::gemm_nt_acc(m, n, k, g, b.values().data(), a.grad().data());
      if (b.requires_grad())
        detail::gemm_tn_acc(k, m, n, a.values().data(), g, b.grad().data());
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> reshape(const TensorT<S>& a, Shape shape) {
  // -1 infers one dimension.
  int64_t known = 1, infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      TACO_CHECK(infer < 0, "reshape: more than one -1");
      infer = static_cast<int64_t>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) shape[static_cast<size_t>(infer)] = a.size() / known;
  TACO_CHECK(shape_numel(shape) == a.size(), "reshape ", shape_str(a.shape()), " -> ",
             shape_str(shape), " changes element count");
  TensorT<S> out = TensorT<S>::from(shape, a.values());
  if (detail::track(out, a)) {
    TapeT<S>::active()->record([a, out]() mutable {
      S* ga = a.grad().data();
      const S* g = out.grad().data();
      for (int64_t i = 0; i < a.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

namespace detail {
// Splits shape at axis: outer = prod(dims before axis), inner = prod(dims after).
inline void axis_split(const Shape& s, int axis, int64_t& outer, int64_t& axis_dim,
                       int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  axis_dim = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}
inline int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  TACO_CHECK(axis >= 0 && axis < rank, "axis out of range");
  return axis;
}
}  // namespace detail

template <class S>
TensorT<S> slice(const TensorT<S>& a, int axis, int64_t start, int64_t len) {
  const int ax = detail::normalize_axis(axis, static_cast<int>(a.rank()));
  int64_t outer, ad, inner;
  detail::axis_split(a.shape(), ax, outer, ad, inner);
  TACO_CHECK(start >= 0 && len >= 0 && start + len <= ad, "slice [", start, ",", start + len,
             ") out of range for axis size ", ad);
  Shape os(a.shape());
  os[static_cast<size_t>(ax)] = len;
  TensorT<S> out = TensorT<S>::zeros(os);
  const S* av = a.values().data();
  S* ov = out.values().data();
  for (int64_t o = 0; o < outer; ++o)
    std::copy(av + (o * ad + start) * inner, av + (o * ad + start + len) * inner,
              ov + o * len * inner);
  if (detail::track(out, a)) {
    TapeT<S>::active()->record([a, out, outer, ad, inner, start, len]() mutable {
      S* ga = a.grad().data();
      const S* g = out.grad().data();
      for (int64_t o = 0; o < outer; ++o) {
        S* dst = ga + (o * ad + start) * inner;
        const S* src = g + o * len * inner;
        for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts, int axis) {
  TACO_CHECK(!parts.empty(), "concat of zero tensors");
  const int ax = detail::normalize_axis(axis, static_cast<int>(parts[0].rank()));
  Shape os(parts[0].shape());
  int64_t total = 0;
  for (const auto& p : parts) {
    TACO_CHECK(p.rank() == parts[0].rank(), "concat rank mismatch");
    for (int d = 0; d < static_cast<int>(os.size()); ++d)
      if (d != ax)
        TACO_CHECK(p.shape()[static_cast<size_t>(d)] == os[static_cast<size_t>(d)],
                   "concat shape mismatch on axis ", d);
    total += p.dim(ax);
  }
  os[static_cast<size_t>(ax)] = total;
  TensorT<S> out = TensorT<S>::zeros(os);
  int64_t outer, od, inner;
  detail::axis_split(os, ax, outer, od, inner);
  S* ov = out.values().data();
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t pd = p.dim(ax);
    const S* pv = p.values().data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(pv + o * pd * inner, pv + (o + 1) * pd * inner, ov + (o * od + off) * inner);
    off += pd;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any && TapeT<S>::active()) {
    out.set_requires_grad(true);
    auto parts_copy = parts;
    TapeT<S>::active()->record([parts_copy, out, outer, od, inner]() mutable {
      const S* g = out.grad().data();
      int64_t off = 0;
      for (auto& p : parts_copy) {
        const int64_t pdim = p.size() / (outer * inner);
        if (p.requires_grad()) {
          S* gp = p.grad().data();
          for (int64_t o = 0; o < outer; ++o) {
            const S* src = g + (o * od + off) * inner;
            S* dst = gp + o * pdim * inner;
            for (int64_t i = 0; i < pdim * inner; ++i) dst[i] += src[i];
          }
        }
        off += pdim;
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> reverse_axis(const TensorT<S>& a, int axis) {
  const int ax = detail::normalize_axis(axis, static_cast<int>(a.rank()));
  int64_t outer, ad, inner;
  detail::axis_split(a.shape(), ax, outer, ad, inner);
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  const S* av = a.values().data();
  S* ov = out.values().data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t d = 0; d < ad; ++d)
      std::copy(av + (o * ad + d) * inner, av + (o * ad + d + 1) * inner,
                ov + (o * ad + (ad - 1 - d)) * inner);
  if (detail::track(out, a)) {
    TapeT<S>::active()->record([a, out, outer, ad, inner]() mutable {
      S* ga = a.grad().data();
      const S* g = out.grad().data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t d = 0; d < ad; ++d) {
          const S* src = g + (o * ad + (ad - 1 - d)) * inner;
          S* dst = ga + (o * ad + d) * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {
inline Shape reduced_shape(const Shape& in, const std::vector<int>& axes, bool keepdims) {
  std::vector<bool> red(in.size(), false);
  for (int a : axes) red[static_cast<size_t>(normalize_axis(a, static_cast<int>(in.size())))] = true;
  Shape os;
  for (size_t i = 0; i < in.size(); ++i) {
    if (red[i]) {
      if (keepdims) os.push_back(1);
    } else {
      os.push_back(in[i]);
    }
  }
  if (os.empty()) os.push_back(1);
  return os;
}
}  // namespace detail

template <class S>
TensorT<S> reduce_sum(const TensorT<S>& a, const std::vector<int>& axes, bool keepdims) {
  const size_t r = a.shape().size();
  std::vector<bool> red(r, false);
  for (int ax : axes) red[static_cast<size_t>(detail::normalize_axis(ax, static_cast<int>(r)))] = true;
  Shape os = detail::reduced_shape(a.shape(), axes, keepdims);
  // Keepdims-style shape used for index mapping regardless of `keepdims`.
  Shape kshape(a.shape());
  for (size_t i = 0; i < r; ++i)
    if (red[i]) kshape[i] = 1;
  TensorT<S> out = TensorT<S>::zeros(os);
  {
    S* ov = out.values().data();
    const S* av = a.values().data();
    detail::for_each_broadcast(a.shape(), kshape, kshape,
                               [&](int64_t o, int64_t ia, int64_t) { ov[ia] += av[o]; });
  }
  if (detail::track(out, a)) {
    Shape in_shape = a.shape();
    TapeT<S>::active()->record([a, out, kshape, in_shape]() mutable {
      S* ga = a.grad().data();
      const S* g = out.grad().data();
      detail::for_each_broadcast(in_shape, kshape, kshape,
                                 [&](int64_t o, int64_t ia, int64_t) { ga[o] += g[ia]; });
    });
  }
  return out;
}

template <class S>
TensorT<S> reduce_sum_all(const TensorT<S>& a) {
  std::vector<int> axes(a.shape().size());
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return reduce_sum(a, axes, false);
}

template <class S>
TensorT<S> reduce_mean(const TensorT<S>& a, const std::vector<int>& axes, bool keepdims) {
  TensorT<S> s = reduce_sum(a, axes, keepdims);
  const int64_t n = a.size() / s.size();
  return scale(s, S(1) / static_cast<S>(n));
}

template <class S>
TensorT<S> reduce_mean_all(const TensorT<S>& a) {
  return scale(reduce_sum_all(a), S(1) / static_cast<S>(a.size()));
}

// ---------------------------------------------------------------------------
// softmax over the last axis (numerically stabilized)
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> softmax_lastdim(const TensorT<S>& a) {
  const int64_t n = a.dim(-1);
  const int64_t rows = a.size() / n;
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  const S* av = a.values().data();
  S* ov = out.values().data();
  for (int64_t r = 0; r < rows; ++r) {
    const S* x = av + r * n;
    S* y = ov + r * n;
    S mx = x[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    S sum = S(0);
    for (int64_t i = 0; i < n; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    const S inv = S(1) / sum;
    for (int64_t i = 0; i < n; ++i) y[i] *= inv;
  }
  if (detail::track(out, a)) {
    TapeT<S>::active()->record([a, out, rows, n]() mutable {
      S* ga = a.grad().data();
      const S* g = out.grad().data();
      const S* y = out.values().data();
      for (int64_t r = 0; r < rows; ++r) {
        const S* yr = y + r * n;
        const S* gr = g + r * n;
        S dot = S(0);
        for (int64_t i = 0; i < n; ++i) dot += gr[i] * yr[i];
        S* gar = ga + r * n;
        for (int64_t i = 0; i < n; ++i) gar[i] += yr[i] * (gr[i] - dot);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sequence ops on [B, T, C] tensors
// ---------------------------------------------------------------------------

// Sliding windows of width k with zero padding: out[b, t, w*C + c] =
// x[b, t - pad_left + w, c], zero outside. Output time length is
// T + pad_left + pad_right - k + 1.
template <class S>
TensorT<S> unfold_time(const TensorT<S>& x, int64_t k, int64_t pad_left, int64_t pad_right) {
  TACO_CHECK(x.rank() == 3, "unfold_time expects [B,T,C], got ", shape_str(x.shape()));
  TACO_CHECK(k >= 1, "window width must be >= 1, got ", k);
  const int64_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
  const int64_t To = T + pad_left + pad_right - k + 1;
  TACO_CHECK(To >= 1, "unfold_time window ", k, " too wide for padded length");
  TensorT<S> out = TensorT<S>::zeros({B, To, k * C});
  const S* xv = x.values().data();
  S* ov = out.values().data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < To; ++t) {
      S* dst = ov + ((b * To + t) * k) * C;
      for (int64_t w = 0; w < k; ++w) {
        const int64_t src_t = t - pad_left + w;
        if (src_t >= 0 && src_t < T)
          std::copy(xv + (b * T + src_t) * C, xv + (b * T + src_t + 1) * C, dst + w * C);
      }
    }
  if (detail::track(out, x)) {
    TapeT<S>::active()->record([x, out, B, T, C, To, k, pad_left]() mutable {
      S* gx = x.grad().data();
      const S* g = out.grad().data();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < To; ++t) {
          const S* src = g + ((b * To + t) * k) * C;
          for (int64_t w = 0; w < k; ++w) {
            const int64_t dst_t = t - pad_left + w;
            if (dst_t >= 0 && dst_t < T) {
              S* dst = gx + (b * T + dst_t) * C;
              for (int64_t c = 0; c < C; ++c) dst[c] += src[w * C + c];
            }
          }
        }
    });
  }
  return out;
}

// out[b,t,c] = max(x[b,t,c], x[b,t+1,c]) with one zero frame padded at the
// right edge; stride 1 preserves time resolution.
template <class S>
TensorT<S> maxpool_time_w2(const TensorT<S>& x) {
  TACO_CHECK(x.rank() == 3, "maxpool expects [B,T,C], got ", shape_str(x.shape()));
  const int64_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
  TACO_CHECK(T >= 1, "maxpool on empty sequence");
  TensorT<S> out = TensorT<S>::zeros({B, T, C});
  // +1 offset of the winner, or -1 when the zero pad wins. Left wins ties.
  auto pick = std::make_shared<std::vector<int8_t>>(static_cast<size_t>(B * T * C));
  const S* xv = x.values().data();
  S* ov = out.values().data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t c = 0; c < C; ++c) {
        const int64_t i = (b * T + t) * C + c;
        const S cur = xv[i];
        const S nxt = t + 1 < T ? xv[i + C] : S(0);
        if (cur >= nxt) {
          ov[i] = cur;
          (*pick)[static_cast<size_t>(i)] = 0;
        } else {
          ov[i] = nxt;
          (*pick)[static_cast<size_t>(i)] = t + 1 < T ? int8_t(1) : int8_t(-1);
        }
      }
  if (detail::track(out, x)) {
    TapeT<S>::active()->record([x, out, pick, B, T, C]() mutable {
      S* gx = x.grad().data();
      const S* g = out.grad().data();
      for (int64_t i = 0; i < B * T * C; ++i) {
        const int8_t p = (*pick)[static_cast<size_t>(i)];
        if (p == 0)
          gx[i] += g[i];
        else if (p == 1)
          gx[i + C] += g[i];
        // p == -1: zero pad won; no gradient.
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// dropout (inverted: survivors scaled by 1/(1-rate) at train time)
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> dropout(const TensorT<S>& x, double rate, Rng& rng, bool train) {
  TACO_CHECK(rate >= 0.0 && rate < 1.0, "dropout rate must be in [0,1), got ", rate);
  if (!train || rate == 0.0) {
    // Identity; still participates in the graph.
    return detail::unary_op(
        x, [](S v) { return v; }, [](S, S, S g) { return g; });
  }
  const S keep_scale = S(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(x.size()));
  for (auto& m : *mask) m = rng.bernoulli(rate) ? 0 : 1;
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  const S* xv = x.values().data();
  S* ov = out.values().data();
  for (int64_t i = 0; i < x.size(); ++i) ov[i] = (*mask)[static_cast<size_t>(i)] ? xv[i] * keep_scale : S(0);
  if (detail::track(out, x)) {
    TapeT<S>::active()->record([x, out, mask, keep_scale]() mutable {
      S* gx = x.grad().data();
      const S* g = out.grad().data();
      for (int64_t i = 0; i < x.size(); ++i)
        if ((*mask)[static_cast<size_t>(i)]) gx[i] += g[i] * keep_scale;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// embedding: row gather with scatter-add backward
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> embedding_lookup(const TensorT<S>& table, const std::vector<int64_t>& ids,
                            Shape out_lead_shape = {}) {
  TACO_CHECK(table.rank() == 2, "embedding table must be [V,D], got ", shape_str(table.shape()));
  const int64_t V = table.dim(0), D = table.dim(1);
  for (size_t i = 0; i < ids.size(); ++i)
    TACO_CHECK(ids[i] >= 0 && ids[i] < V, "embedding id ", ids[i], " at position ", i,
               " out of range [0,", V, ")");
  Shape os = out_lead_shape;
  if (os.empty()) os = {static_cast<int64_t>(ids.size())};
  TACO_CHECK(shape_numel(os) == static_cast<int64_t>(ids.size()),
             "embedding output shape does not match id count");
  os.push_back(D);
  TensorT<S> out = TensorT<S>::zeros(os);
  const S* tv = table.values().data();
  S* ov = out.values().data();
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(tv + ids[i] * D, tv + (ids[i] + 1) * D, ov + static_cast<int64_t>(i) * D);
  if (detail::track(out, table)) {
    auto ids_copy = std::make_shared<std::vector<int64_t>>(ids);
    TapeT<S>::active()->record([table, out, ids_copy, D]() mutable {
      S* gt = table.grad().data();
      const S* g = out.grad().data();
      for (size_t i = 0; i < ids_copy->size(); ++i) {
        S* dst = gt + (*ids_copy)[i] * D;
        const S* src = g + static_cast<int64_t>(i) * D;
        for (int64_t d = 0; d < D; ++d) dst[d] += src[d];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// l1 loss: mean |pred - target| with sign subgradient (0 at ties)
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> l1_loss(const TensorT<S>& pred, const TensorT<S>& target) {
  TACO_CHECK(pred.shape() == target.shape(), "l1_loss shape mismatch: ", shape_str(pred.shape()),
             " vs ", shape_str(target.shape()));
  return reduce_mean_all(abs(sub(pred, target)));
}

// Records a custom node on the active tape. Used by tests to exercise the
// tape with synthetic backward rules.
template <class S>
void record_custom(std::function<void()> backward_fn) {
  if (TapeT<S>::active()) TapeT<S>::active()->record(std::move(backward_fn));
}

}  // namespace tacoforge
