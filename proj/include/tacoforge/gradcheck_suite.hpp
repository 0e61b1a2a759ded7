#pragma once

// Ready-made finite-difference checks covering every differentiable
// primitive plus a micro end-to-end model; shared by the cli and the
// acceptance suite so both verify the same list.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tacoforge/gradcheck.hpp"
#include "tacoforge/model.hpp"

namespace tacoforge {

namespace gradsuite_detail {

using T64 = TensorT<double>;

// Evenly spaced magnitudes shuffled into random order: generic values with a
// built-in gap from activation kinks and pooling ties.
inline std::vector<double> spaced(int64_t n, double lo, double hi, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    v[static_cast<size_t>(i)] = lo + (hi - lo) * (static_cast<double>(i) + 0.5) / n;
  rng.shuffle(v);
  return v;
}

inline T64 leaf_of(const Shape& shape, double lo, double hi, Rng& rng) {
  return T64::from(shape, spaced(shape_numel(shape), lo, hi, rng), /*requires_grad=*/true);
}

// Scalarizes with fixed generic weights so every output element gets a
// distinct cotangent.
inline T64 weigh(const T64& y, Rng& rng) {
  std::vector<double> w(static_cast<size_t>(y.size()));
  for (auto& x : w) x = rng.uniform(0.5, 1.5);
  return reduce_sum_all(mul(y, T64::from(y.shape(), w)));
}

}  // namespace gradsuite_detail

struct OpCheck {
  std::string name;
  std::function<GradcheckReport()> run;
};

inline std::vector<OpCheck> primitive_checks() {
  using namespace gradsuite_detail;
  // Finite differences run at h=1e-3: big enough that curvature shows up
  // above the noise floor (so a tiny tolerance is guaranteed to fail), and
  // every input is placed at least 0.05 from any kink.
  GradcheckOptions opt;
  opt.h = 1e-3;

  std::vector<OpCheck> checks;
  auto add_check = [&](const std::string& name,
                       std::function<T64(std::vector<T64>&, Rng&)> build,
                       std::vector<std::pair<Shape, std::pair<double, double>>> leaf_specs) {
    checks.push_back({name, [name, build, leaf_specs, opt]() {
                        Rng rng(std::hash<std::string>{}(name) & 0xffff);
                        std::vector<T64> leaves;
                        std::vector<std::string> names;
                        for (size_t i = 0; i < leaf_specs.size(); ++i) {
                          leaves.push_back(leaf_of(leaf_specs[i].first, leaf_specs[i].second.first,
                                                   leaf_specs[i].second.second, rng));
                          names.push_back(name + ".in" + std::to_string(i));
                        }
                        Rng wrng(rng.split());
                        auto loss_fn = [&leaves, &build, &wrng]() {
                          Rng w = wrng;  // same weights/masks on every call
                          return build(leaves, w);
                        };
                        return gradcheck(leaves, names, loss_fn, opt);
                      }});
  };

  const std::pair<double, double> pos{0.5, 1.5};
  const std::pair<double, double> gen{-1.0, 1.0};

  add_check("add", [](auto& l, Rng& r) { return weigh(add(l[0], l[1]), r); },
            {{{2, 3}, gen}, {{2, 3}, gen}});
  add_check("sub", [](auto& l, Rng& r) { return weigh(sub(l[0], l[1]), r); },
            {{{2, 3}, gen}, {{2, 3}, gen}});
  add_check("mul", [](auto& l, Rng& r) { return weigh(mul(l[0], l[1]), r); },
            {{{2, 3}, gen}, {{2, 3}, gen}});
  add_check("neg", [](auto& l, Rng& r) { return weigh(neg(l[0]), r); }, {{{2, 3}, gen}});
  add_check("scale", [](auto& l, Rng& r) { return weigh(scale(l[0], 1.7), r); }, {{{2, 3}, gen}});
  add_check("add_scalar", [](auto& l, Rng& r) { return weigh(add_scalar(l[0], 0.3), r); },
            {{{2, 3}, gen}});
  add_check("abs", [](auto& l, Rng& r) { return weigh(abs(l[0]), r); }, {{{2, 4}, {0.1, 1.0}}});
  add_check("relu", [](auto& l, Rng& r) { return weigh(relu(l[0]), r); }, {{{3, 4}, gen}});
  add_check("sigmoid", [](auto& l, Rng& r) { return weigh(sigmoid(l[0]), r); }, {{{2, 3}, gen}});
  add_check("tanh", [](auto& l, Rng& r) { return weigh(tanh(l[0]), r); }, {{{2, 3}, gen}});
  add_check("sqrt", [](auto& l, Rng& r) { return weigh(sqrt(l[0]), r); }, {{{2, 3}, pos}});
  add_check("reciprocal", [](auto& l, Rng& r) { return weigh(reciprocal(l[0]), r); },
            {{{2, 3}, {0.8, 1.6}}});
  add_check("clamp", [](auto& l, Rng& r) { return weigh(clamp(l[0], -0.5, 0.5), r); },
            {{{3, 4}, {-0.9, 0.9}}});
  add_check("matmul", [](auto& l, Rng& r) { return weigh(matmul(l[0], l[1]), r); },
            {{{3, 4}, gen}, {{4, 2}, gen}});
  add_check("reshape", [](auto& l, Rng& r) { return weigh(reshape(l[0], {3, 4}), r); },
            {{{2, 6}, gen}});
  add_check("slice", [](auto& l, Rng& r) { return weigh(slice(l[0], 1, 1, 3), r); },
            {{{2, 5, 3}, gen}});
  add_check("concat",
            [](auto& l, Rng& r) { return weigh(concat(std::vector<T64>{l[0], l[1]}, 1), r); },
            {{{2, 2, 3}, gen}, {{2, 1, 3}, gen}});
  add_check("reverse_axis", [](auto& l, Rng& r) { return weigh(reverse_axis(l[0], 1), r); },
            {{{2, 4, 3}, gen}});
  add_check("reduce_sum",
            [](auto& l, Rng& r) { return weigh(reduce_sum(l[0], {1}, false), r); },
            {{{2, 3, 4}, gen}});
  add_check("reduce_sum_all", [](auto& l, Rng&) { return reduce_sum_all(l[0]); },
            {{{2, 3}, gen}});
  add_check("reduce_mean",
            [](auto& l, Rng& r) { return weigh(reduce_mean(l[0], {0, 2}, true), r); },
            {{{2, 3, 4}, gen}});
  add_check("reduce_mean_all", [](auto& l, Rng&) { return reduce_mean_all(l[0]); },
            {{{2, 3}, gen}});
  add_check("softmax_lastdim", [](auto& l, Rng& r) { return weigh(softmax_lastdim(l[0]), r); },
            {{{2, 3, 5}, gen}});
  add_check("unfold_time", [](auto& l, Rng& r) { return weigh(unfold_time(l[0], 3, 1, 1), r); },
            {{{1, 5, 3}, gen}});
  add_check("maxpool_time_w2", [](auto& l, Rng& r) { return weigh(maxpool_time_w2(l[0]), r); },
            {{{1, 6, 2}, gen}});
  add_check("dropout",
            [](auto& l, Rng& r) {
              Rng mask_rng(77);  // fixed mask across finite-difference evaluations
              auto y = dropout(l[0], 0.375, mask_rng, true);
              return weigh(y, r);
            },
            {{{2, 8}, gen}});
  add_check("embedding_lookup",
            [](auto& l, Rng& r) {
              const std::vector<int64_t> ids = {1, 3, 0, 6, 3};
              return weigh(embedding_lookup(l[0], ids), r);
            },
            {{{7, 4}, gen}});
  add_check("l1_loss",
            [](auto& l, Rng&) {
              T64 target = T64::from({2, 3}, {1.3, 1.5, 1.7, 1.9, 2.1, 2.3});
              return l1_loss(l[0], target);
            },
            {{{2, 3}, {0.0, 1.0}}});
  return checks;
}

inline GradcheckReport model_e2e_check() {
  using gradsuite_detail::T64;
  ModelConfig cfg = ModelConfig::micro();
  cfg.reduction = 2;
  TacotronT<double> model(cfg, 777);
  Rng data_rng(778);
  // Generic point: zero-initialized biases sit exactly on relu kinks for the
  // all-zero GO frame, where one-sided slopes disagree with the subgradient.
  for (auto& t : model.params().tensors())
    for (auto& v : t.values()) v = data_rng.uniform(-0.5, 0.5);
  const int64_t B = 2, L = 3, T = 4;
  std::vector<int64_t> ids;
  for (int64_t i = 0; i < B * L; ++i)
    ids.push_back(static_cast<int64_t>(data_rng.uniform_int(static_cast<uint64_t>(cfg.vocab_size))));
  std::vector<double> mel_v(static_cast<size_t>(B * T * cfg.mel_bands));
  std::vector<double> lin_v(static_cast<size_t>(B * T * cfg.linear_bins));
  for (auto& v : mel_v) v = data_rng.uniform(0.0, 1.0);
  for (auto& v : lin_v) v = data_rng.uniform(0.0, 1.0);
  auto mel_t = T64::from({B, T, cfg.mel_bands}, mel_v);
  auto lin_t = T64::from({B, T, cfg.linear_bins}, lin_v);

  auto loss_fn = [&]() {
    Rng rng(4242);  // identical dropout masks on every evaluation
    auto enc = model.encode(ids, B, L, RunMode::train(), rng);
    auto dec = model.decode_teacher_forced(enc, mel_t, RunMode::train(), rng);
    auto lin = model.postnet(dec.frames, RunMode::train());
    return add(l1_loss(dec.frames, mel_t), l1_loss(lin, lin_t));
  };
  GradcheckOptions opt;
  opt.h = 1e-6;  // keeps finite differences clear of relu kinks
  return gradcheck(model.params().tensors(), model.params().names(), loss_fn, opt);
}

}  // namespace tacoforge
