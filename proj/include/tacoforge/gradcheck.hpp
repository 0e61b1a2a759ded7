#pragma once

// Finite-difference verification of analytic gradients.
//
// Runs the given scalar-valued graph once under a tape to collect analytic
// gradients, then perturbs leaf elements by ±h and compares central
// differences. Double precision only; float gradients are verified by
// instantiating the same templated graph at double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tacoforge/tensor.hpp"

namespace tacoforge {

struct GradcheckLeafReport {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int64_t n_checked = 0;
};

struct GradcheckReport {
  std::vector<GradcheckLeafReport> leaves;
  double max_rel_err = 0.0;

  bool pass(double tolerance) const { return max_rel_err < tolerance; }
};

// rel = |a - n| / max(1e-8, |a| + |n|); near-zero pairs compare absolutely,
// and differences below the finite-difference noise floor count as exact.
inline double gradcheck_rel_err(double analytic, double numeric) {
  if (std::abs(analytic - numeric) < 1e-9) return 0.0;
  const double denom = std::max(1e-8, std::abs(analytic) + std::abs(numeric));
  const double rel = std::abs(analytic - numeric) / denom;
  if (std::abs(analytic) < 1e-7 && std::abs(numeric) < 1e-7) return 0.0;
  return rel;
}

struct GradcheckOptions {
  double h = 1e-5;
  // Check at most this many elements per leaf (evenly strided); 0 = all.
  int64_t max_elems_per_leaf = 0;
};

// leaves: tensors with requires_grad whose gradients are under test.
// loss_fn: rebuilds the graph from current leaf values, returns scalar loss.
// The tape is managed internally; loss_fn must not install its own scope.
inline GradcheckReport gradcheck(std::vector<TensorT<double>> leaves,
                                 const std::vector<std::string>& names,
                                 const std::function<TensorT<double>()>& loss_fn,
                                 const GradcheckOptions& opt = {}) {
  TACO_CHECK(names.empty() || names.size() == leaves.size(),
             "gradcheck: names/leaves length mismatch");
  for (auto& l : leaves) {
    TACO_CHECK(l.requires_grad(), "gradcheck: all leaves must require grad");
    l.zero_grad();
  }

  // Analytic pass.
  {
    TapeT<double> tape;
    TapeScopeT<double> scope(tape);
    TensorT<double> loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& l : leaves) analytic.push_back(l.grad());

  GradcheckReport report;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    GradcheckLeafReport lr;
    lr.name = names.empty() ? ("leaf" + std::to_string(li)) : names[li];
    const int64_t n = leaf.size();
    int64_t stride = 1;
    if (opt.max_elems_per_leaf > 0 && n > opt.max_elems_per_leaf)
      stride = (n + opt.max_elems_per_leaf - 1) / opt.max_elems_per_leaf;
    for (int64_t j = 0; j < n; j += stride) {
      const double saved = leaf.values()[static_cast<size_t>(j)];
      leaf.values()[static_cast<size_t>(j)] = saved + opt.h;
      const double fp = loss_fn().item();
      leaf.values()[static_cast<size_t>(j)] = saved - opt.h;
      const double fm = loss_fn().item();
      leaf.values()[static_cast<size_t>(j)] = saved;
      const double numeric = (fp - fm) / (2.0 * opt.h);
      const double a = analytic[li][static_cast<size_t>(j)];
      lr.max_abs_err = std::max(lr.max_abs_err, std::abs(a - numeric));
      lr.max_rel_err = std::max(lr.max_rel_err, gradcheck_rel_err(a, numeric));
      lr.n_checked++;
    }
    report.max_rel_err = std::max(report.max_rel_err, lr.max_rel_err);
    report.leaves.push_back(std::move(lr));
  }
  return report;
}

}  // namespace tacoforge
