#pragma once

// Layer building blocks over the autodiff core: parameter registry, weight
// init, linear/conv/batchnorm layers, GRU cells, highway stacks, pre-nets,
// and the CBHG block. Everything is templated on the scalar type so the same
// graph runs at float (training) and double (gradient verification).

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "tacoforge/errors.hpp"
#include "tacoforge/rng.hpp"
#include "tacoforge/tensor.hpp"

namespace tacoforge {

// ---------------------------------------------------------------------------
// Parameter registry: ordered, name-addressed tensors. Trainables carry
// gradients; buffers (batch-norm running stats) do not but still persist in
// checkpoints.
// ---------------------------------------------------------------------------

template <class S>
class ParamStoreT {
 public:
  TensorT<S> add(const std::string& name, TensorT<S> t) {
    TACO_CHECK(find(name) == nullptr && find_buffer(name) == nullptr,
               "duplicate parameter name: ", name);
    t.set_requires_grad(true);
    names_.push_back(name);
    tensors_.push_back(t);
    return t;
  }

  TensorT<S> add_buffer(const std::string& name, TensorT<S> t) {
    TACO_CHECK(find(name) == nullptr && find_buffer(name) == nullptr,
               "duplicate buffer name: ", name);
    buffer_names_.push_back(name);
    buffers_.push_back(t);
    return t;
  }

  const TensorT<S>* find(const std::string& name) const {
    for (size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return &tensors_[i];
    return nullptr;
  }
  const TensorT<S>* find_buffer(const std::string& name) const {
    for (size_t i = 0; i < buffer_names_.size(); ++i)
      if (buffer_names_[i] == name) return &buffers_[i];
    return nullptr;
  }

  const std::vector<std::string>& names() const { return names_; }
  std::vector<TensorT<S>>& tensors() { return tensors_; }
  const std::vector<TensorT<S>>& tensors() const { return tensors_; }
  const std::vector<std::string>& buffer_names() const { return buffer_names_; }
  std::vector<TensorT<S>>& buffers() { return buffers_; }
  const std::vector<TensorT<S>>& buffers() const { return buffers_; }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  void zero_grads() {
    for (auto& t : tensors_) t.zero_grad();
  }

  // Deep copy at another scalar type; layout and order preserved.
  template <class T>
  ParamStoreT<T> cast() const {
    ParamStoreT<T> out;
    for (size_t i = 0; i < names_.size(); ++i) {
      std::vector<T> v(tensors_[i].values().begin(), tensors_[i].values().end());
      out.add(names_[i], TensorT<T>::from(tensors_[i].shape(), std::move(v)));
    }
    for (size_t i = 0; i < buffer_names_.size(); ++i) {
      std::vector<T> v(buffers_[i].values().begin(), buffers_[i].values().end());
      out.add_buffer(buffer_names_[i], TensorT<T>::from(buffers_[i].shape(), std::move(v)));
    }
    return out;
  }

  // Copies values from a same-layout store (used to sync f64 gradcheck
  // copies or load checkpoints).
  void load_values_from(const ParamStoreT<S>& src) {
    TACO_CHECK(src.names_ == names_ && src.buffer_names_ == buffer_names_,
               "parameter store layout mismatch");
    for (size_t i = 0; i < tensors_.size(); ++i) tensors_[i].values() = src.tensors_[i].values();
    for (size_t i = 0; i < buffers_.size(); ++i) buffers_[i].values() = src.buffers_[i].values();
  }

 private:
  std::vector<std::string> names_;
  std::vector<TensorT<S>> tensors_;
  std::vector<std::string> buffer_names_;
  std::vector<TensorT<S>> buffers_;
};

// ---------------------------------------------------------------------------
// Weight init
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> glorot_uniform(Shape shape, int64_t fan_in, int64_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  TensorT<S> t = TensorT<S>::zeros(std::move(shape));
  for (auto& v : t.values()) v = static_cast<S>(rng.uniform(-limit, limit));
  return t;
}

// Orthogonal-ish square matrix: Gram-Schmidt on Gaussian columns.
template <class S>
TensorT<S> orthogonalish(int64_t n, Rng& rng) {
  std::vector<double> q(static_cast<size_t>(n * n));
  for (auto& v : q) v = rng.normal();
  for (int64_t j = 0; j < n; ++j) {
    for (int64_t p = 0; p < j; ++p) {
      double dot = 0.0;
      for (int64_t i = 0; i < n; ++i) dot += q[static_cast<size_t>(i * n + j)] * q[static_cast<size_t>(i * n + p)];
      for (int64_t i = 0; i < n; ++i) q[static_cast<size_t>(i * n + j)] -= dot * q[static_cast<size_t>(i * n + p)];
    }
    double norm = 0.0;
    for (int64_t i = 0; i < n; ++i) norm += q[static_cast<size_t>(i * n + j)] * q[static_cast<size_t>(i * n + j)];
    norm = std::sqrt(norm);
    // Degenerate column: fall back to a unit basis vector.
    if (norm < 1e-8) {
      for (int64_t i = 0; i < n; ++i) q[static_cast<size_t>(i * n + j)] = i == j ? 1.0 : 0.0;
    } else {
      for (int64_t i = 0; i < n; ++i) q[static_cast<size_t>(i * n + j)] /= norm;
    }
  }
  TensorT<S> t = TensorT<S>::zeros({n, n});
  for (size_t i = 0; i < q.size(); ++i) t.values()[i] = static_cast<S>(q[i]);
  return t;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

template <class S>
struct LinearT {
  TensorT<S> W;  // [in, out]
  TensorT<S> b;  // [out], absent when bias disabled

  LinearT() = default;
  LinearT(ParamStoreT<S>& ps, const std::string& prefix, int64_t in, int64_t out, Rng& rng,
          bool bias = true, double bias_init = 0.0) {
    W = ps.add(prefix + ".W", glorot_uniform<S>({in, out}, in, out, rng));
    if (bias) b = ps.add(prefix + ".b", TensorT<S>::full({out}, static_cast<S>(bias_init)));
  }

  TensorT<S> forward(const TensorT<S>& x) const {
    auto y = matmul(x, W);
    return b.defined() ? add(y, b) : y;
  }
};

// ---------------------------------------------------------------------------
// Conv1d with same padding (extra zero on the right for even widths)
// ---------------------------------------------------------------------------

template <class S>
struct Conv1dT {
  TensorT<S> W;  // [k*Cin, Cout], window-major rows
  TensorT<S> b;  // [Cout]
  int64_t k = 0, cin = 0, cout = 0;

  Conv1dT() = default;
  Conv1dT(ParamStoreT<S>& ps, const std::string& prefix, int64_t width, int64_t in, int64_t out,
          Rng& rng)
      : k(width), cin(in), cout(out) {
    TACO_CHECK(width >= 1, "conv width must be >= 1, got ", width);
    W = ps.add(prefix + ".W", glorot_uniform<S>({width * in, out}, width * in, out, rng));
    b = ps.add(prefix + ".b", TensorT<S>::zeros({out}));
  }

  // x: [B, T, Cin] -> [B, T, Cout]
  TensorT<S> forward(const TensorT<S>& x) const {
    auto u = unfold_time(x, k, (k - 1) / 2, k / 2);
    return add(matmul(u, W), b);
  }
};

// ---------------------------------------------------------------------------
// BatchNorm over channels of [B, T, C]
// ---------------------------------------------------------------------------

template <class S>
struct BatchNorm1dT {
  TensorT<S> gamma, beta;             // trainable [C]
  TensorT<S> running_mean, running_var;  // buffers [C]
  TensorT<S> batches_tracked;         // buffer [1]
  double momentum = 0.99;
  double eps = 1e-5;

  BatchNorm1dT() = default;
  BatchNorm1dT(ParamStoreT<S>& ps, const std::string& prefix, int64_t c) {
    gamma = ps.add(prefix + ".gamma", TensorT<S>::full({c}, S(1)));
    beta = ps.add(prefix + ".beta", TensorT<S>::zeros({c}));
    running_mean = ps.add_buffer(prefix + ".running_mean", TensorT<S>::zeros({c}));
    running_var = ps.add_buffer(prefix + ".running_var", TensorT<S>::full({c}, S(1)));
    batches_tracked = ps.add_buffer(prefix + ".batches_tracked", TensorT<S>::zeros({1}));
  }

  TensorT<S> forward(const TensorT<S>& x, bool training) const {
    TACO_CHECK(x.rank() == 3, "batchnorm expects [B,T,C], got ", shape_str(x.shape()));
    if (training) {
      auto mean = reduce_mean(x, {0, 1}, true);                   // [1,1,C]
      auto centered = sub(x, mean);
      auto var = reduce_mean(mul(centered, centered), {0, 1}, true);  // biased
      auto inv_std = reciprocal(sqrt(add_scalar(var, static_cast<S>(eps))));
      auto y = add(mul(mul(centered, inv_std), gamma), beta);
      // Running stats update lives outside the graph.
      const int64_t c = x.dim(2);
      for (int64_t i = 0; i < c; ++i) {
        running_mean.values()[static_cast<size_t>(i)] =
            static_cast<S>(momentum) * running_mean.values()[static_cast<size_t>(i)] +
            static_cast<S>(1.0 - momentum) * mean.values()[static_cast<size_t>(i)];
        running_var.values()[static_cast<size_t>(i)] =
            static_cast<S>(momentum) * running_var.values()[static_cast<size_t>(i)] +
            static_cast<S>(1.0 - momentum) * var.values()[static_cast<size_t>(i)];
      }
      batches_tracked.values()[0] += S(1);
      return y;
    }
    if (batches_tracked.values()[0] == S(0)) {
      static bool warned = false;
      if (!warned) {
        std::fprintf(stderr,
                     "note: batchnorm inference before any training batch; using init stats\n");
        warned = true;
      }
    }
    auto centered = sub(x, running_mean);
    auto inv_std = reciprocal(sqrt(add_scalar(running_var, static_cast<S>(eps))));
    return add(mul(mul(centered, inv_std), gamma), beta);
  }
};

// ---------------------------------------------------------------------------
// GRU cell. Gate convention:
//   z = sigmoid(Wz x + Uz h + bz)
//   r = sigmoid(Wr x + Ur h + br)
//   hc = tanh(Wh x + Uh (r*h) + bh)
//   h' = (1 - z)*h + z*hc
// z and r are packed column-wise into one pair of matrices.
// ---------------------------------------------------------------------------

template <class S>
struct GruCellT {
  TensorT<S> Wzr;  // [in, 2u]
  TensorT<S> Uzr;  // [u, 2u]
  TensorT<S> bzr;  // [2u]
  TensorT<S> Wh;   // [in, u]
  TensorT<S> Uh;   // [u, u]
  TensorT<S> bh;   // [u]
  int64_t units = 0;

  GruCellT() = default;
  GruCellT(ParamStoreT<S>& ps, const std::string& prefix, int64_t in, int64_t u, Rng& rng)
      : units(u) {
    Wzr = ps.add(prefix + ".Wzr", glorot_uniform<S>({in, 2 * u}, in, u, rng));
    Wh = ps.add(prefix + ".Wh", glorot_uniform<S>({in, u}, in, u, rng));
    // Recurrent matrices: orthogonal-ish blocks.
    auto uz = orthogonalish<S>(u, rng);
    auto ur = orthogonalish<S>(u, rng);
    TensorT<S> uzr = TensorT<S>::zeros({u, 2 * u});
    for (int64_t i = 0; i < u; ++i)
      for (int64_t j = 0; j < u; ++j) {
        uzr.values()[static_cast<size_t>(i * 2 * u + j)] = uz.values()[static_cast<size_t>(i * u + j)];
        uzr.values()[static_cast<size_t>(i * 2 * u + u + j)] = ur.values()[static_cast<size_t>(i * u + j)];
      }
    Uzr = ps.add(prefix + ".Uzr", uzr);
    Uh = ps.add(prefix + ".Uh", orthogonalish<S>(u, rng));
    bzr = ps.add(prefix + ".bzr", TensorT<S>::zeros({2 * u}));
    bh = ps.add(prefix + ".bh", TensorT<S>::zeros({u}));
  }

  // x: [B, in], h: [B, u] -> [B, u]
  TensorT<S> step(const TensorT<S>& x, const TensorT<S>& h) const {
    TACO_CHECK(x.rank() == 2 && h.rank() == 2 && h.dim(1) == units,
               "gru_cell shapes: x ", shape_str(x.shape()), ", h ", shape_str(h.shape()));
    auto zr = sigmoid(add(add(matmul(x, Wzr), matmul(h, Uzr)), bzr));
    auto z = slice(zr, 1, 0, units);
    auto r = slice(zr, 1, units, units);
    auto hc = tanh(add(add(matmul(x, Wh), matmul(mul(r, h), Uh)), bh));
    // (1-z)*h + z*hc == h - z*h + z*hc
    return add(sub(h, mul(z, h)), mul(z, hc));
  }
};

// Runs a GRU across time. x: [B, T, in] -> [B, T, u]; h0 zeros.
template <class S>
TensorT<S> gru_sequence(const GruCellT<S>& cell, const TensorT<S>& x) {
  TACO_CHECK(x.rank() == 3, "gru_sequence expects [B,T,in]");
  const int64_t B = x.dim(0), T = x.dim(1);
  TensorT<S> h = TensorT<S>::zeros({B, cell.units});
  std::vector<TensorT<S>> outs;
  outs.reserve(static_cast<size_t>(T));
  for (int64_t t = 0; t < T; ++t) {
    auto xt = reshape(slice(x, 1, t, 1), {B, x.dim(2)});
    h = cell.step(xt, h);
    outs.push_back(reshape(h, {B, 1, cell.units}));
  }
  return concat(outs, 1);
}

// Forward and backward passes concatenated: [B, T, 2u].
template <class S>
TensorT<S> bigru_sequence(const GruCellT<S>& fw, const GruCellT<S>& bw, const TensorT<S>& x) {
  auto f = gru_sequence(fw, x);
  auto b = reverse_axis(gru_sequence(bw, reverse_axis(x, 1)), 1);
  return concat<S>({f, b}, 2);
}

// ---------------------------------------------------------------------------
// Highway stack: y = T*H(x) + (1-T)*x per layer. Transform-gate bias starts
// at -1 so early training favors the carry path.
// ---------------------------------------------------------------------------

template <class S>
struct HighwayT {
  std::vector<LinearT<S>> H, T_;

  HighwayT() = default;
  HighwayT(ParamStoreT<S>& ps, const std::string& prefix, int64_t dim, int layers, Rng& rng) {
    for (int l = 0; l < layers; ++l) {
      H.emplace_back(ps, prefix + ".h" + std::to_string(l), dim, dim, rng);
      T_.emplace_back(ps, prefix + ".t" + std::to_string(l), dim, dim, rng, true, -1.0);
    }
  }

  TensorT<S> forward(TensorT<S> x) const {
    for (size_t l = 0; l < H.size(); ++l) {
      auto h = relu(H[l].forward(x));
      auto t = sigmoid(T_[l].forward(x));
      x = add(mul(t, h), sub(x, mul(t, x)));  // t*h + (1-t)*x
    }
    return x;
  }
};

// ---------------------------------------------------------------------------
// Pre-net: FC+ReLU+Dropout twice. Dropout applies whenever apply_dropout is
// set, independent of batch-norm style train/infer distinctions.
// ---------------------------------------------------------------------------

template <class S>
struct PrenetT {
  LinearT<S> fc1, fc2;
  double rate = 0.5;

  PrenetT() = default;
  PrenetT(ParamStoreT<S>& ps, const std::string& prefix, int64_t in, int64_t h1, int64_t h2,
          double dropout_rate, Rng& rng)
      : rate(dropout_rate) {
    fc1 = LinearT<S>(ps, prefix + ".fc1", in, h1, rng);
    fc2 = LinearT<S>(ps, prefix + ".fc2", h1, h2, rng);
  }

  TensorT<S> forward(const TensorT<S>& x, bool apply_dropout, Rng& rng) const {
    auto a = dropout(relu(fc1.forward(x)), rate, rng, apply_dropout);
    return dropout(relu(fc2.forward(a)), rate, rng, apply_dropout);
  }
};

// ---------------------------------------------------------------------------
// Conv bank: K parallel convolutions of widths 1..K, each conv -> BN -> ReLU,
// stacked along channels.
// ---------------------------------------------------------------------------

template <class S>
struct ConvBankT {
  std::vector<Conv1dT<S>> convs;
  std::vector<BatchNorm1dT<S>> bns;

  ConvBankT() = default;
  ConvBankT(ParamStoreT<S>& ps, const std::string& prefix, int K, int64_t in, int64_t channels,
            Rng& rng) {
    TACO_CHECK(K >= 1, "conv bank requires K >= 1, got ", K);
    for (int k = 1; k <= K; ++k) {
      convs.emplace_back(ps, prefix + ".conv" + std::to_string(k), k, in, channels, rng);
      bns.emplace_back(ps, prefix + ".bn" + std::to_string(k), channels);
    }
  }

  TensorT<S> forward(const TensorT<S>& x, bool training) const {
    std::vector<TensorT<S>> parts;
    parts.reserve(convs.size());
    for (size_t i = 0; i < convs.size(); ++i)
      parts.push_back(relu(bns[i].forward(convs[i].forward(x), training)));
    return concat(parts, 2);
  }
};

// ---------------------------------------------------------------------------
// CBHG: conv bank -> maxpool(w2,s1) -> conv projections -> residual ->
// highway -> bidirectional GRU.
// ---------------------------------------------------------------------------

struct CbhgDims {
  int bank_k = 16;
  int64_t bank_channels = 128;
  int64_t proj_hidden = 128;   // first projection, ReLU
  int64_t proj_out = 128;      // second projection, linear; must match input dim
  int highway_layers = 4;
  int64_t highway_dim = 128;
  int64_t bigru_units = 128;   // per direction
};

template <class S>
struct CbhgT {
  ConvBankT<S> bank;
  Conv1dT<S> proj1, proj2;
  BatchNorm1dT<S> bn1, bn2;
  LinearT<S> pre_highway;  // dimension fix when proj_out != highway_dim
  bool needs_pre_highway = false;
  HighwayT<S> highway;
  GruCellT<S> gru_fw, gru_bw;
  int64_t in_dim = 0;

  CbhgT() = default;
  CbhgT(ParamStoreT<S>& ps, const std::string& prefix, int64_t in, const CbhgDims& d, Rng& rng)
      : in_dim(in) {
    TACO_CHECK(d.proj_out == in,
               "cbhg residual needs the second projection width to equal the input width (",
               d.proj_out, " vs ", in, ")");
    bank = ConvBankT<S>(ps, prefix + ".bank", d.bank_k, in, d.bank_channels, rng);
    proj1 = Conv1dT<S>(ps, prefix + ".proj1", 3, d.bank_k * d.bank_channels, d.proj_hidden, rng);
    bn1 = BatchNorm1dT<S>(ps, prefix + ".proj1_bn", d.proj_hidden);
    proj2 = Conv1dT<S>(ps, prefix + ".proj2", 3, d.proj_hidden, d.proj_out, rng);
    bn2 = BatchNorm1dT<S>(ps, prefix + ".proj2_bn", d.proj_out);
    needs_pre_highway = d.proj_out != d.highway_dim;
    if (needs_pre_highway)
      pre_highway = LinearT<S>(ps, prefix + ".pre_highway", d.proj_out, d.highway_dim, rng);
    highway = HighwayT<S>(ps, prefix + ".highway", d.highway_dim, d.highway_layers, rng);
    gru_fw = GruCellT<S>(ps, prefix + ".gru_fw", d.highway_dim, d.bigru_units, rng);
    gru_bw = GruCellT<S>(ps, prefix + ".gru_bw", d.highway_dim, d.bigru_units, rng);
  }

  // x: [B, T, in] -> [B, T, 2*bigru_units]
  TensorT<S> forward(const TensorT<S>& x, bool training) const {
    auto banked = bank.forward(x, training);
    auto pooled = maxpool_time_w2(banked);
    auto p1 = relu(bn1.forward(proj1.forward(pooled), training));
    auto p2 = bn2.forward(proj2.forward(p1), training);
    auto res = add(p2, x);
    auto hx = needs_pre_highway ? pre_highway.forward(res) : res;
    auto hw = highway.forward(hx);
    return bigru_sequence(gru_fw, gru_bw, hw);
  }
};

}  // namespace tacoforge
