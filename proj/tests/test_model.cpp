// Layer library and sequence model: hand-computed oracles for the GRU cell,
// convolution, batch norm, highway, and attention; shape contracts for the
// decoder; end-to-end double-precision gradient verification.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <memory>
#include <utility>
#include <vector>

#include "tacoforge/gradcheck.hpp"
#include "tacoforge/model.hpp"
#include "tacoforge/nn.hpp"
#include "tacoforge/rng.hpp"
#include "tacoforge/tensor.hpp"

using namespace tacoforge;

namespace {

// ---------------------------------------------------------------------------
// Oracles: plain-loop reference implementations, independent of the library.
// ---------------------------------------------------------------------------

// GRU step for one batch row. Wzr/Uzr columns [0,u) are the update gate and
// [u,2u) the reset gate, matching the packed layout.
std::vector<double> oracle_gru(const std::vector<double>& x, const std::vector<double>& h,
                               const std::vector<double>& Wzr, const std::vector<double>& Uzr,
                               const std::vector<double>& bzr, const std::vector<double>& Wh,
                               const std::vector<double>& Uh, const std::vector<double>& bh,
                               int64_t in, int64_t u) {
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  std::vector<double> z(u), r(u), out(u);
  for (int64_t j = 0; j < u; ++j) {
    double az = bzr[static_cast<size_t>(j)], ar = bzr[static_cast<size_t>(u + j)];
    for (int64_t i = 0; i < in; ++i) {
      az += x[static_cast<size_t>(i)] * Wzr[static_cast<size_t>(i * 2 * u + j)];
      ar += x[static_cast<size_t>(i)] * Wzr[static_cast<size_t>(i * 2 * u + u + j)];
    }
    for (int64_t i = 0; i < u; ++i) {
      az += h[static_cast<size_t>(i)] * Uzr[static_cast<size_t>(i * 2 * u + j)];
      ar += h[static_cast<size_t>(i)] * Uzr[static_cast<size_t>(i * 2 * u + u + j)];
    }
    z[static_cast<size_t>(j)] = sig(az);
    r[static_cast<size_t>(j)] = sig(ar);
  }
  for (int64_t j = 0; j < u; ++j) {
    double a = bh[static_cast<size_t>(j)];
    for (int64_t i = 0; i < in; ++i) a += x[static_cast<size_t>(i)] * Wh[static_cast<size_t>(i * u + j)];
    for (int64_t i = 0; i < u; ++i)
      a += r[static_cast<size_t>(i)] * h[static_cast<size_t>(i)] * Uh[static_cast<size_t>(i * u + j)];
    double hc = std::tanh(a);
    out[static_cast<size_t>(j)] =
        (1.0 - z[static_cast<size_t>(j)]) * h[static_cast<size_t>(j)] + z[static_cast<size_t>(j)] * hc;
  }
  return out;
}

// Correlation with zero padding: y[b,t,o] = sum_{w,c} x[b, t-pl+w, c] * W[w*C+c, o] + bias[o].
std::vector<double> oracle_conv1d(const std::vector<double>& x, int64_t B, int64_t T, int64_t C,
                                  const std::vector<double>& W, const std::vector<double>& bias,
                                  int64_t k, int64_t O) {
  const int64_t pl = (k - 1) / 2;
  std::vector<double> y(static_cast<size_t>(B * T * O), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t o = 0; o < O; ++o) {
        double acc = bias[static_cast<size_t>(o)];
        for (int64_t w = 0; w < k; ++w) {
          const int64_t src = t - pl + w;
          if (src < 0 || src >= T) continue;
          for (int64_t c = 0; c < C; ++c)
            acc += x[static_cast<size_t>((b * T + src) * C + c)] *
                   W[static_cast<size_t>((w * C + c) * O + o)];
        }
        y[static_cast<size_t>((b * T + t) * O + o)] = acc;
      }
  return y;
}

// Additive attention for one utterance: scores, softmax, context.
void oracle_attention(const std::vector<double>& mem, int64_t L, int64_t M,
                      const std::vector<double>& query, int64_t Q,
                      const std::vector<double>& W1, const std::vector<double>& W2,
                      const std::vector<double>& b, const std::vector<double>& v, int64_t A,
                      std::vector<double>* weights, std::vector<double>* context) {
  std::vector<double> e(static_cast<size_t>(L), 0.0);
  for (int64_t i = 0; i < L; ++i) {
    for (int64_t a = 0; a < A; ++a) {
      double s = b[static_cast<size_t>(a)];
      for (int64_t m = 0; m < M; ++m)
        s += mem[static_cast<size_t>(i * M + m)] * W1[static_cast<size_t>(m * A + a)];
      for (int64_t q = 0; q < Q; ++q)
        s += query[static_cast<size_t>(q)] * W2[static_cast<size_t>(q * A + a)];
      e[static_cast<size_t>(i)] += v[static_cast<size_t>(a)] * std::tanh(s);
    }
  }
  double mx = e[0];
  for (double s : e) mx = std::max(mx, s);
  double denom = 0.0;
  weights->assign(static_cast<size_t>(L), 0.0);
  for (int64_t i = 0; i < L; ++i) {
    (*weights)[static_cast<size_t>(i)] = std::exp(e[static_cast<size_t>(i)] - mx);
    denom += (*weights)[static_cast<size_t>(i)];
  }
  for (auto& w : *weights) w /= denom;
  context->assign(static_cast<size_t>(M), 0.0);
  for (int64_t i = 0; i < L; ++i)
    for (int64_t m = 0; m < M; ++m)
      (*context)[static_cast<size_t>(m)] += (*weights)[static_cast<size_t>(i)] * mem[static_cast<size_t>(i * M + m)];
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorT<S> t = TensorT<S>::zeros(std::move(shape));
  for (auto& v : t.values()) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

template <class S>
void set_param(ParamStoreT<S>& ps, const std::string& name, const std::vector<S>& v) {
  const TensorT<S>* t = ps.find(name);
  REQUIRE(t != nullptr);
  REQUIRE(t->values().size() == v.size());
  t->values() = v;  // shared-handle semantics: values are mutable through the handle
}

template <class S>
std::vector<S> param_values(const ParamStoreT<S>& ps, const std::string& name) {
  const TensorT<S>* t = ps.find(name);
  if (!t) t = ps.find_buffer(name);
  REQUIRE(t != nullptr);
  return t->values();
}

std::vector<int64_t> random_ids(int64_t n, int64_t vocab, Rng& rng) {
  std::vector<int64_t> ids(static_cast<size_t>(n));
  for (auto& id : ids) id = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(vocab)));
  return ids;
}

}  // namespace

// ---------------------------------------------------------------------------
// GRU cell
// ---------------------------------------------------------------------------

TEST_CASE("gru cell matches a direct scalar computation") {
  Rng rng(11);
  ParamStoreT<double> ps;
  GruCellT<double> cell(ps, "g", 2, 2, rng);
  // Replace the structured init with arbitrary values so the oracle sees
  // nothing special.
  for (auto& t : ps.tensors())
    for (auto& v : t.values()) v = rng.uniform(-0.9, 0.9);

  auto Wzr = param_values(ps, "g.Wzr"), Uzr = param_values(ps, "g.Uzr"),
       bzr = param_values(ps, "g.bzr"), Wh = param_values(ps, "g.Wh"),
       Uh = param_values(ps, "g.Uh"), bh = param_values(ps, "g.bh");

  for (int trial = 0; trial < 5; ++trial) {
    auto x = rand_tensor<double>({1, 2}, rng);
    auto h = rand_tensor<double>({1, 2}, rng);
    auto out = cell.step(x, h);
    auto ref = oracle_gru(x.values(), h.values(), Wzr, Uzr, bzr, Wh, Uh, bh, 2, 2);
    for (int j = 0; j < 2; ++j)
      CHECK(out.values()[static_cast<size_t>(j)] ==
            doctest::Approx(ref[static_cast<size_t>(j)]).epsilon(1e-12));
  }
}

TEST_CASE("gru cell with all-zero weights halves the state") {
  Rng rng(12);
  ParamStoreT<double> ps;
  GruCellT<double> cell(ps, "g", 3, 4, rng);
  for (auto& t : ps.tensors())
    for (auto& v : t.values()) v = 0.0;
  auto x = rand_tensor<double>({2, 3}, rng);
  auto h = rand_tensor<double>({2, 4}, rng);
  auto out = cell.step(x, h);
  for (size_t i = 0; i < out.values().size(); ++i)
    CHECK(out.values()[i] == doctest::Approx(0.5 * h.values()[i]).epsilon(1e-12));
}

TEST_CASE("unrolled gru gradients match finite differences") {
  Rng rng(13);
  ParamStoreT<double> ps;
  GruCellT<double> cell(ps, "g", 3, 3, rng);
  auto x0 = rand_tensor<double>({2, 3}, rng);
  auto x1 = rand_tensor<double>({2, 3}, rng);
  auto x2 = rand_tensor<double>({2, 3}, rng);
  auto loss_fn = [&]() {
    TensorT<double> h = TensorT<double>::zeros({2, 3});
    h = cell.step(x0, h);
    h = cell.step(x1, h);
    h = cell.step(x2, h);
    return reduce_mean_all(mul(h, h));
  };
  auto rep = gradcheck(ps.tensors(), ps.names(), loss_fn);
  CHECK(rep.max_rel_err < 1e-4);
  CHECK(rep.max_rel_err < 1e-7);  // double precision should be far tighter
}

// ---------------------------------------------------------------------------
// Conv1d
// ---------------------------------------------------------------------------

TEST_CASE("conv layer with a width-1 identity kernel copies the input") {
  Rng rng(21);
  ParamStoreT<double> ps;
  Conv1dT<double> conv(ps, "c", 1, 3, 3, rng);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[static_cast<size_t>(i * 3 + i)] = 1.0;
  set_param(ps, "c.W", eye);
  set_param(ps, "c.b", std::vector<double>(3, 0.0));
  auto x = rand_tensor<double>({2, 5, 3}, rng);
  auto y = conv.forward(x);
  for (size_t i = 0; i < x.values().size(); ++i)
    CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-12));
}

TEST_CASE("conv layer matches direct correlation for odd, even, and oversized widths") {
  Rng rng(22);
  for (int64_t k : {1, 2, 3, 4, 16}) {
    const int64_t B = 2, T = 10, C = 3, O = 4;
    ParamStoreT<double> ps;
    Conv1dT<double> conv(ps, "c", k, C, O, rng);
    auto x = rand_tensor<double>({B, T, C}, rng);
    auto y = conv.forward(x);
    REQUIRE(y.shape() == Shape{B, T, O});
    auto ref = oracle_conv1d(x.values(), B, T, C, param_values(ps, "c.W"),
                             param_values(ps, "c.b"), k, O);
    for (size_t i = 0; i < ref.size(); ++i)
      CHECK(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-10));
  }
}

TEST_CASE("conv layer places an impulse response at the correlation offset") {
  Rng rng(23);
  ParamStoreT<double> ps;
  Conv1dT<double> conv(ps, "c", 3, 1, 1, rng);
  set_param(ps, "c.W", {0.25, 0.5, -0.75});  // window positions 0,1,2
  set_param(ps, "c.b", {0.0});
  TensorT<double> x = TensorT<double>::zeros({1, 7, 1});
  x.values()[3] = 1.0;  // impulse at t=3
  auto y = conv.forward(x);
  // y[t] = W[3 - t + 1] wherever that window index is valid.
  std::vector<double> expect = {0, 0, -0.75, 0.5, 0.25, 0, 0};
  for (int t = 0; t < 7; ++t)
    CHECK(y.values()[static_cast<size_t>(t)] == doctest::Approx(expect[static_cast<size_t>(t)]));
}

TEST_CASE("conv layer gradients match finite differences") {
  Rng rng(24);
  ParamStoreT<double> ps;
  Conv1dT<double> conv(ps, "c", 4, 2, 3, rng);
  auto x = rand_tensor<double>({2, 6, 2}, rng);
  x.set_requires_grad(true);
  std::vector<TensorT<double>> leaves = ps.tensors();
  leaves.push_back(x);
  std::vector<std::string> names = ps.names();
  names.push_back("x");
  auto rep = gradcheck(leaves, names, [&]() { return reduce_mean_all(mul(conv.forward(x), conv.forward(x))); });
  CHECK(rep.max_rel_err < 1e-4);
}

// ---------------------------------------------------------------------------
// Batch norm
// ---------------------------------------------------------------------------

TEST_CASE("batch norm training output has zero mean and unit variance per channel") {
  Rng rng(31);
  ParamStoreT<float> ps;
  BatchNorm1dT<float> bn(ps, "bn", 5);
  auto x = rand_tensor<float>({4, 6, 5}, rng, -2.0, 2.0);
  auto y = bn.forward(x, true);
  const int64_t N = 4 * 6;
  for (int64_t c = 0; c < 5; ++c) {
    double mean = 0.0, var = 0.0;
    for (int64_t n = 0; n < N; ++n) mean += y.values()[static_cast<size_t>(n * 5 + c)];
    mean /= N;
    for (int64_t n = 0; n < N; ++n) {
      double d = y.values()[static_cast<size_t>(n * 5 + c)] - mean;
      var += d * d;
    }
    var /= N;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batch norm maps a constant batch to beta") {
  Rng rng(32);
  ParamStoreT<double> ps;
  BatchNorm1dT<double> bn(ps, "bn", 3);
  set_param(ps, "bn.beta", {0.7, -0.2, 1.5});
  auto x = TensorT<double>::full({2, 4, 3}, 3.25);
  auto y = bn.forward(x, true);
  for (int64_t n = 0; n < 8; ++n)
    for (int64_t c = 0; c < 3; ++c)
      CHECK(y.values()[static_cast<size_t>(n * 3 + c)] ==
            doctest::Approx(param_values(ps, "bn.beta")[static_cast<size_t>(c)]).epsilon(1e-12));
}

TEST_CASE("batch norm running statistics follow the momentum rule") {
  Rng rng(33);
  ParamStoreT<double> ps;
  BatchNorm1dT<double> bn(ps, "bn", 2);
  auto x = rand_tensor<double>({3, 4, 2}, rng);
  // Hand-computed biased batch moments.
  const int64_t N = 12;
  std::vector<double> mu(2, 0.0), var(2, 0.0);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < 2; ++c) mu[static_cast<size_t>(c)] += x.values()[static_cast<size_t>(n * 2 + c)];
  for (auto& m : mu) m /= N;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < 2; ++c) {
      double d = x.values()[static_cast<size_t>(n * 2 + c)] - mu[static_cast<size_t>(c)];
      var[static_cast<size_t>(c)] += d * d;
    }
  for (auto& v : var) v /= N;

  bn.forward(x, true);
  auto rm = param_values(ps, "bn.running_mean");
  auto rv = param_values(ps, "bn.running_var");
  for (int c = 0; c < 2; ++c) {
    CHECK(rm[static_cast<size_t>(c)] == doctest::Approx(0.01 * mu[static_cast<size_t>(c)]).epsilon(1e-9));
    CHECK(rv[static_cast<size_t>(c)] ==
          doctest::Approx(0.99 * 1.0 + 0.01 * var[static_cast<size_t>(c)]).epsilon(1e-9));
  }
  // Second identical batch compounds the update.
  bn.forward(x, true);
  auto rm2 = param_values(ps, "bn.running_mean");
  for (int c = 0; c < 2; ++c)
    CHECK(rm2[static_cast<size_t>(c)] ==
          doctest::Approx(0.99 * rm[static_cast<size_t>(c)] + 0.01 * mu[static_cast<size_t>(c)]).epsilon(1e-9));
}

TEST_CASE("batch norm inference uses init stats before training and real stats after") {
  Rng rng(34);
  ParamStoreT<double> ps;
  BatchNorm1dT<double> bn(ps, "bn", 2);
  auto x = rand_tensor<double>({2, 3, 2}, rng);
  auto y0 = bn.forward(x, false);  // init stats: mean 0, var 1
  for (size_t i = 0; i < x.values().size(); ++i)
    CHECK(y0.values()[i] == doctest::Approx(x.values()[i] / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
  bn.forward(x, true);
  auto y1 = bn.forward(x, false);
  double diff = 0.0;
  for (size_t i = 0; i < x.values().size(); ++i) diff += std::abs(y1.values()[i] - y0.values()[i]);
  CHECK(diff > 1e-6);  // stored statistics moved
}

TEST_CASE("batch norm gradients match finite differences") {
  Rng rng(35);
  ParamStoreT<double> ps;
  BatchNorm1dT<double> bn(ps, "bn", 3);
  auto x = rand_tensor<double>({2, 4, 3}, rng);
  x.set_requires_grad(true);
  std::vector<TensorT<double>> leaves = ps.tensors();
  leaves.push_back(x);
  std::vector<std::string> names = ps.names();
  names.push_back("x");
  auto rep = gradcheck(leaves, names, [&]() {
    auto y = bn.forward(x, true);
    return reduce_mean_all(mul(y, add_scalar(y, 0.3)));
  });
  CHECK(rep.max_rel_err < 1e-4);
}

// ---------------------------------------------------------------------------
// Highway
// ---------------------------------------------------------------------------

TEST_CASE("highway layer interpolates between carry and transform") {
  Rng rng(41);
  auto make = [&](double t_bias) {
    auto ps = std::make_shared<ParamStoreT<double>>();
    HighwayT<double> hw(*ps, "hw", 3, 1, rng);
    auto b = param_values(*ps, "hw.t0.b");
    for (auto& v : b) v = t_bias;
    set_param(*ps, "hw.t0.b", b);
    std::vector<double> zero(9, 0.0);
    set_param(*ps, "hw.t0.W", zero);
    return std::pair(ps, hw);
  };

  auto x = rand_tensor<double>({2, 3}, rng);
  {
    auto [ps, hw] = make(-50.0);  // gate shut: pure carry
    auto y = hw.forward(x);
    for (size_t i = 0; i < x.values().size(); ++i)
      CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-12));
  }
  {
    auto [ps, hw] = make(50.0);  // gate open: pure transform
    auto y = hw.forward(x);
    auto hW = param_values(*ps, "hw.h0.W");
    auto hb = param_values(*ps, "hw.h0.b");
    for (int64_t r = 0; r < 2; ++r)
      for (int64_t c = 0; c < 3; ++c) {
        double a = hb[static_cast<size_t>(c)];
        for (int64_t k = 0; k < 3; ++k)
          a += x.values()[static_cast<size_t>(r * 3 + k)] * hW[static_cast<size_t>(k * 3 + c)];
        CHECK(y.values()[static_cast<size_t>(r * 3 + c)] ==
              doctest::Approx(std::max(0.0, a)).epsilon(1e-10));
      }
  }
}

TEST_CASE("one-unit highway matches the scalar formula") {
  Rng rng(42);
  ParamStoreT<double> ps;
  HighwayT<double> hw(ps, "hw", 1, 1, rng);
  set_param(ps, "hw.h0.W", {0.8});
  set_param(ps, "hw.h0.b", {0.1});
  set_param(ps, "hw.t0.W", {-0.6});
  set_param(ps, "hw.t0.b", {-1.0});
  for (double xv : {-1.3, -0.2, 0.0, 0.4, 2.0}) {
    auto x = TensorT<double>::full({1, 1}, xv);
    auto y = hw.forward(x);
    double t = 1.0 / (1.0 + std::exp(-(-0.6 * xv - 1.0)));
    double h = std::max(0.0, 0.8 * xv + 0.1);
    CHECK(y.values()[0] == doctest::Approx(t * h + (1.0 - t) * xv).epsilon(1e-12));
  }
}

TEST_CASE("highway transform gate bias starts at -1") {
  Rng rng(43);
  ParamStoreT<float> ps;
  HighwayT<float> hw(ps, "hw", 4, 2, rng);
  for (const char* name : {"hw.t0.b", "hw.t1.b"})
    for (float v : param_values(ps, name)) CHECK(v == -1.0f);
  for (float v : param_values(ps, "hw.h0.b")) CHECK(v == 0.0f);
}

// ---------------------------------------------------------------------------
// Pre-net
// ---------------------------------------------------------------------------

TEST_CASE("prenet dropout is controlled by its caller, not the batch norm mode") {
  Rng rng(51);
  ParamStoreT<float> ps;
  PrenetT<float> pn(ps, "pn", 6, 8, 4, 0.5, rng);
  auto x = rand_tensor<float>({3, 6}, rng);

  Rng ra(100), rb(100), rc(101), rd(7);
  auto ya = pn.forward(x, true, ra);
  auto yb = pn.forward(x, true, rb);
  auto yc = pn.forward(x, true, rc);
  REQUIRE(ya.shape() == Shape{3, 4});
  CHECK(std::memcmp(ya.values().data(), yb.values().data(), ya.values().size() * sizeof(float)) == 0);
  bool differs = false;
  for (size_t i = 0; i < ya.values().size(); ++i)
    if (ya.values()[i] != yc.values()[i]) differs = true;
  CHECK(differs);

  auto y0 = pn.forward(x, false, rd);
  auto y1 = pn.forward(x, false, rd);
  CHECK(std::memcmp(y0.values().data(), y1.values().data(), y0.values().size() * sizeof(float)) == 0);

  auto yz = pn.forward(TensorT<float>::zeros({2, 6}), true, ra);
  for (float v : yz.values()) CHECK(v == 0.0f);  // zero biases keep zero input at zero
}

// ---------------------------------------------------------------------------
// CBHG
// ---------------------------------------------------------------------------

TEST_CASE("cbhg preserves sequence length and reports both directions") {
  Rng rng(61);
  CbhgDims d;
  d.bank_k = 3;
  d.bank_channels = 4;
  d.proj_hidden = 5;
  d.proj_out = 6;
  d.highway_layers = 2;
  d.highway_dim = 4;  // != proj_out: exercises the in-projection
  d.bigru_units = 3;
  ParamStoreT<float> ps;
  CbhgT<float> cbhg(ps, "cbhg", 6, d, rng);
  REQUIRE(ps.find("cbhg.pre_highway.W") != nullptr);
  for (int64_t T : {1, 2, 5, 8}) {
    auto x = rand_tensor<float>({2, T, 6}, rng);
    auto y = cbhg.forward(x, true);
    CHECK(y.shape() == Shape{2, T, 6});
  }
}

TEST_CASE("cbhg rejects a projection width that breaks the residual") {
  Rng rng(62);
  CbhgDims d;
  d.proj_out = 5;
  ParamStoreT<float> ps;
  CHECK_THROWS_AS(CbhgT<float>(ps, "cbhg", 6, d, rng), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

TEST_CASE("attention matches a brute-force oracle and is a distribution") {
  ModelConfig cfg = ModelConfig::micro();
  TacotronT<double> model(cfg, 71);
  const auto& ps = model.params();
  const int64_t M = cfg.memory_dim(), A = cfg.attention_hidden, Q = cfg.attention_rnn_units;

  Rng rng(72);
  const int64_t L = 4;
  EncodedTextT<double> enc;
  enc.memory = rand_tensor<double>({1, L, M}, rng);
  enc.memory_proj = matmul(enc.memory, *ps.find("attention.W1"));
  auto query = rand_tensor<double>({1, Q}, rng);

  TensorT<double> context;
  auto weights = model.attention_step(enc, query, &context);
  REQUIRE(weights.shape() == Shape{1, L});
  REQUIRE(context.shape() == Shape{1, M});

  std::vector<double> w_ref, c_ref;
  oracle_attention(enc.memory.values(), L, M, query.values(), Q,
                   param_values(ps, "attention.W1"), param_values(ps, "attention.W2"),
                   param_values(ps, "attention.b"), param_values(ps, "attention.v"), A,
                   &w_ref, &c_ref);
  double sum = 0.0;
  for (int64_t i = 0; i < L; ++i) {
    CHECK(weights.values()[static_cast<size_t>(i)] ==
          doctest::Approx(w_ref[static_cast<size_t>(i)]).epsilon(1e-9));
    CHECK(weights.values()[static_cast<size_t>(i)] >= 0.0);
    sum += weights.values()[static_cast<size_t>(i)];
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  for (int64_t m = 0; m < M; ++m)
    CHECK(context.values()[static_cast<size_t>(m)] ==
          doctest::Approx(c_ref[static_cast<size_t>(m)]).epsilon(1e-9));
}

TEST_CASE("attention over a single position gives weight one") {
  ModelConfig cfg = ModelConfig::micro();
  TacotronT<double> model(cfg, 73);
  Rng rng(74);
  EncodedTextT<double> enc;
  enc.memory = rand_tensor<double>({1, 1, cfg.memory_dim()}, rng);
  enc.memory_proj = matmul(enc.memory, *model.params().find("attention.W1"));
  auto query = rand_tensor<double>({1, cfg.attention_rnn_units}, rng);
  TensorT<double> context;
  auto weights = model.attention_step(enc, query, &context);
  CHECK(weights.values()[0] == 1.0);
  for (int64_t m = 0; m < cfg.memory_dim(); ++m)
    CHECK(context.values()[static_cast<size_t>(m)] ==
          doctest::Approx(enc.memory.values()[static_cast<size_t>(m)]).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// Model-level contracts
// ---------------------------------------------------------------------------

TEST_CASE("teacher-forced decoding satisfies the shape contract across r, L, T") {
  for (int r : {1, 2, 5}) {
    ModelConfig cfg = ModelConfig::micro();
    cfg.reduction = r;
    TacotronT<float> model(cfg, 81);
    Rng rng(82);
    const int64_t B = 2;
    for (int64_t L : {int64_t(1), int64_t(7), int64_t(50)}) {
      for (int64_t steps : {int64_t(1), int64_t(5), int64_t(40)}) {
        const int64_t T = steps * r;
        auto ids = random_ids(B * L, cfg.vocab_size, rng);
        auto enc = model.encode(ids, B, L, RunMode::train(), rng);
        REQUIRE(enc.memory.shape() == Shape{B, L, cfg.memory_dim()});
        auto targets = rand_tensor<float>({B, T, cfg.mel_bands}, rng, 0.0, 1.0);
        auto res = model.decode_teacher_forced(enc, targets, RunMode::train(), rng);
        REQUIRE(res.frames.shape() == Shape{B, T, cfg.mel_bands});
        REQUIRE(res.alignments.shape() == Shape{B, steps, L});
        for (int64_t b = 0; b < B; ++b)
          for (int64_t t = 0; t < steps; ++t) {
            double sum = 0.0;
            for (int64_t i = 0; i < L; ++i) {
              float w = res.alignments.values()[static_cast<size_t>((b * steps + t) * L + i)];
              CHECK(w >= 0.0f);
              sum += w;
            }
            CHECK(std::abs(sum - 1.0) < 1e-5);
          }
      }
    }
  }
}

TEST_CASE("decoding rejects target lengths that are not a multiple of r") {
  ModelConfig cfg = ModelConfig::micro();
  cfg.reduction = 2;
  TacotronT<float> model(cfg, 83);
  Rng rng(84);
  auto ids = random_ids(3, cfg.vocab_size, rng);
  auto enc = model.encode(ids, 1, 3, RunMode::train(), rng);
  auto targets = rand_tensor<float>({1, 5, cfg.mel_bands}, rng, 0.0, 1.0);
  CHECK_THROWS_AS(model.decode_teacher_forced(enc, targets, RunMode::train(), rng),
                  std::invalid_argument);
}

TEST_CASE("free-running decode emits whole frame groups and honors the stop callback") {
  ModelConfig cfg = ModelConfig::micro();
  cfg.reduction = 2;
  TacotronT<float> model(cfg, 85);
  Rng rng(86);
  auto ids = random_ids(4, cfg.vocab_size, rng);
  auto enc = model.encode(ids, 1, 4, RunMode::infer(false), rng);

  auto res = model.decode_free_running(enc, 7, nullptr, RunMode::infer(false), rng);
  CHECK(res.frames.shape() == Shape{1, 14, cfg.mel_bands});
  CHECK(res.alignments.shape() == Shape{1, 7, 4});

  int calls = 0;
  auto res2 = model.decode_free_running(
      enc, 7, [&](const std::vector<float>&) { return ++calls >= 3; }, RunMode::infer(false), rng);
  CHECK(res2.frames.dim(1) == 6);  // stopped after the third group
  CHECK(calls == 3);
}

TEST_CASE("free-running decode equals a manual step loop with clamped feedback") {
  ModelConfig cfg = ModelConfig::micro();
  cfg.reduction = 2;
  TacotronT<float> model(cfg, 87);
  Rng rng(88);
  auto ids = random_ids(3, cfg.vocab_size, rng);
  auto enc = model.encode(ids, 1, 3, RunMode::infer(false), rng);

  Rng r1(5), r2(5);
  auto res = model.decode_free_running(enc, 4, nullptr, RunMode::infer(false), r1);

  auto st = model.initial_state(1);
  std::vector<float> manual;
  for (int t = 0; t < 4; ++t) {
    auto frames = model.decoder_step(enc, st, RunMode::infer(false), r2, nullptr);
    manual.insert(manual.end(), frames.values().begin(), frames.values().end());
    TensorT<float> next = TensorT<float>::zeros({1, cfg.mel_bands});
    for (int64_t j = 0; j < cfg.mel_bands; ++j) {
      float v = frames.values()[static_cast<size_t>((cfg.reduction - 1) * cfg.mel_bands + j)];
      next.values()[static_cast<size_t>(j)] = std::min(1.0f, std::max(0.0f, v));
    }
    st.last_frame = next;
  }
  REQUIRE(res.frames.values().size() == manual.size());
  CHECK(std::memcmp(res.frames.values().data(), manual.data(), manual.size() * sizeof(float)) == 0);
}

TEST_CASE("decoder prenet dropout stays active at inference by default") {
  ModelConfig cfg = ModelConfig::micro();
  TacotronT<float> model(cfg, 91);
  Rng rng(92);
  auto ids = random_ids(3, cfg.vocab_size, rng);
  auto enc = model.encode(ids, 1, 3, RunMode::infer(false), rng);

  Rng ra(1), rb(2);
  auto fa = model.decode_free_running(enc, 3, nullptr, RunMode::infer(), ra);
  auto fb = model.decode_free_running(enc, 3, nullptr, RunMode::infer(), rb);
  bool differs = false;
  for (size_t i = 0; i < fa.frames.values().size(); ++i)
    if (fa.frames.values()[i] != fb.frames.values()[i]) differs = true;
  CHECK(differs);

  Rng rc(1), rd(2);
  auto fc = model.decode_free_running(enc, 3, nullptr, RunMode::infer(false), rc);
  auto fd = model.decode_free_running(enc, 3, nullptr, RunMode::infer(false), rd);
  CHECK(std::memcmp(fc.frames.values().data(), fd.frames.values().data(),
                    fc.frames.values().size() * sizeof(float)) == 0);
}

TEST_CASE("postnet maps mel frames to linear frames of the same length") {
  ModelConfig cfg = ModelConfig::micro();
  TacotronT<float> model(cfg, 93);
  Rng rng(94);
  for (int64_t T : {2, 6}) {
    auto mel = rand_tensor<float>({2, T, cfg.mel_bands}, rng, 0.0, 1.0);
    auto lin = model.postnet(mel, RunMode::train());
    CHECK(lin.shape() == Shape{2, T, cfg.linear_bins});
  }
}

TEST_CASE("variants select the expected submodules") {
  ModelConfig cfg = ModelConfig::micro();

  cfg.variant = "full";
  TacotronT<float> full(cfg, 95);
  CHECK(full.params().find("encoder.cbhg.bank.conv1.W") != nullptr);
  CHECK(full.params().find("encoder.prenet.fc1.W") != nullptr);
  CHECK(full.params().find("postnet.cbhg.bank.conv1.W") != nullptr);
  CHECK(full.config().decoder_bands() == cfg.mel_bands);

  cfg.variant = "gru_encoder";
  TacotronT<float> ge(cfg, 96);
  CHECK(ge.params().find("encoder.cbhg.bank.conv1.W") == nullptr);
  CHECK(ge.params().find("encoder.prenet.fc1.W") != nullptr);
  CHECK(ge.params().find("encoder.gru1.Wzr") != nullptr);
  CHECK(ge.params().find("postnet.cbhg.bank.conv1.W") != nullptr);

  cfg.variant = "vanilla";
  TacotronT<float> va(cfg, 97);
  CHECK(va.params().find("encoder.prenet.fc1.W") == nullptr);
  CHECK(va.params().find("decoder.prenet.fc1.W") == nullptr);
  CHECK(va.params().find("postnet.cbhg.bank.conv1.W") == nullptr);
  CHECK(va.config().decoder_bands() == cfg.linear_bins);
  Rng rng(98);
  auto mel = rand_tensor<float>({1, 2, cfg.mel_bands}, rng);
  CHECK_THROWS_AS(va.postnet(mel, RunMode::train()), std::invalid_argument);

  CHECK_THROWS_AS(parse_variant("bogus"), UsageError);
}

TEST_CASE("vanilla variant decodes linear frames with scheduled sampling") {
  ModelConfig cfg = ModelConfig::micro();
  cfg.variant = "vanilla";
  cfg.reduction = 2;
  TacotronT<float> model(cfg, 99);
  Rng rng(100);
  const int64_t B = 2, L = 4, T = 6;
  auto ids = random_ids(B * L, cfg.vocab_size, rng);
  auto enc = model.encode(ids, B, L, RunMode::train(), rng);
  auto targets = rand_tensor<float>({B, T, cfg.linear_bins}, rng, 0.0, 1.0);
  auto res = model.decode_scheduled(enc, targets, RunMode::train(), rng);
  CHECK(res.frames.shape() == Shape{B, T, cfg.linear_bins});

  // Scheduled sampling is a vanilla-only training mode.
  ModelConfig fcfg = ModelConfig::micro();
  TacotronT<float> fmodel(fcfg, 99);
  auto fenc = fmodel.encode(ids, B, L, RunMode::train(), rng);
  auto ftargets = rand_tensor<float>({B, T, fcfg.mel_bands}, rng, 0.0, 1.0);
  CHECK_THROWS_AS(fmodel.decode_scheduled(fenc, ftargets, RunMode::train(), rng), UsageError);

  // With rate 0 every fed-back frame is the model's own; with rate 1 it is
  // the ground truth; outputs must differ once weights are nonzero.
  ModelConfig c1 = cfg;
  c1.scheduled_sampling_rate = 0.0;
  TacotronT<float> m1(c1, 99);
  ModelConfig c2 = cfg;
  c2.scheduled_sampling_rate = 1.0;
  TacotronT<float> m2(c2, 99);
  Rng ra(3), rb(3);
  auto e1 = m1.encode(ids, B, L, RunMode::train(), ra);
  auto e2 = m2.encode(ids, B, L, RunMode::train(), rb);
  auto r1 = m1.decode_scheduled(e1, targets, RunMode::train(), ra);
  auto r2 = m2.decode_scheduled(e2, targets, RunMode::train(), rb);
  bool differs = false;
  for (size_t i = 0; i < r1.frames.values().size(); ++i)
    if (r1.frames.values()[i] != r2.frames.values()[i]) differs = true;
  CHECK(differs);
}

TEST_CASE("identical seeds build identical models and decodes") {
  ModelConfig cfg = ModelConfig::micro();
  TacotronT<float> a(cfg, 123), b(cfg, 123);
  REQUIRE(a.params().names() == b.params().names());
  for (size_t i = 0; i < a.params().tensors().size(); ++i) {
    const auto& ta = a.params().tensors()[i].values();
    const auto& tb = b.params().tensors()[i].values();
    REQUIRE(ta.size() == tb.size());
    CHECK(std::memcmp(ta.data(), tb.data(), ta.size() * sizeof(float)) == 0);
  }
  Rng r1(9), r2(9);
  auto ids = random_ids(6, cfg.vocab_size, r1);
  Rng r3(9);
  auto ids2 = random_ids(6, cfg.vocab_size, r3);
  auto e1 = a.encode(ids, 2, 3, RunMode::train(), r1);
  auto e2 = b.encode(ids2, 2, 3, RunMode::train(), r3);
  CHECK(std::memcmp(e1.memory.values().data(), e2.memory.values().data(),
                    e1.memory.values().size() * sizeof(float)) == 0);
}

TEST_CASE("model config validation rejects bad values") {
  ModelConfig cfg;
  cfg.reduction = 0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = ModelConfig();
  cfg.prenet_dropout = 1.0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = ModelConfig();
  cfg.variant = "nope";
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  CHECK(ModelConfig::micro().memory_dim() == 6);
  CHECK(TacotronT<float>(ModelConfig::micro(), 1).params().total_params() <
        TacotronT<float>(ModelConfig::tiny(), 1).params().total_params());
}

// ---------------------------------------------------------------------------
// End-to-end gradient verification
// ---------------------------------------------------------------------------

TEST_CASE("the whole training graph passes double-precision gradient verification") {
  ModelConfig cfg = ModelConfig::micro();
  cfg.reduction = 2;
  TacotronT<double> model(cfg, 777);
  Rng data_rng(778);
  // Check at a generic point: zero-initialized biases sit exactly on the relu
  // kink for the all-zero GO frame, where one-sided slopes disagree with the
  // chosen subgradient. Random values move every preactivation off the kink.
  for (auto& t : model.params().tensors())
    for (auto& v : t.values()) v = data_rng.uniform(-0.5, 0.5);
  const int64_t B = 2, L = 3, T = 4;
  auto ids = random_ids(B * L, cfg.vocab_size, data_rng);
  auto mel_t = rand_tensor<double>({B, T, cfg.mel_bands}, data_rng, 0.0, 1.0);
  auto lin_t = rand_tensor<double>({B, T, cfg.linear_bins}, data_rng, 0.0, 1.0);

  auto loss_fn = [&]() {
    Rng rng(4242);  // fixed seed: identical dropout masks on every evaluation
    auto enc = model.encode(ids, B, L, RunMode::train(), rng);
    auto dec = model.decode_teacher_forced(enc, mel_t, RunMode::train(), rng);
    auto lin = model.postnet(dec.frames, RunMode::train());
    return add(l1_loss(dec.frames, mel_t), l1_loss(lin, lin_t));
  };

  GradcheckOptions opt;
  opt.h = 1e-6;  // small step keeps finite differences clear of relu kinks
  auto rep = gradcheck(model.params().tensors(), model.params().names(), loss_fn, opt);
  INFO("worst leaf error ", rep.max_rel_err);
  CHECK(rep.max_rel_err < 1e-5);
}
