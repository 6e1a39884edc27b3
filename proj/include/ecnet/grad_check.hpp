#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ecnet/ops.hpp"
#include "ecnet/random.hpp"
#include "ecnet/tensor.hpp"

namespace ecnet {

struct GradCheckOptions {
  double step = 1e-5;        // central-difference step h
  Index samples = 50;        // random coordinates to probe; 0 probes every coordinate
  uint64_t seed = 7;
  double denom_floor = 1e-8; // relative-error denominator floor
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  Index coordinates = 0;

  bool passes(double tol) const { return max_rel_error < tol; }
};

namespace detail {

inline double rel_error(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

}  // namespace detail

/// Compares reverse-mode gradients of `forward` (built fresh per call on the
/// given tape) against central finite differences evaluated by `eval_ref`
/// while coordinates of the shadow parameters are perturbed. The shadow set
/// mirrors `params` one-to-one in shape; for T = double both sets may alias.
template <typename T>
GradCheckReport grad_check_shadow(const std::function<Tensor<T>(Tape<T>&)>& forward,
                                  std::span<Tensor<T>* const> params,
                                  const std::function<double()>& eval_ref,
                                  std::span<Tensor<double>* const> shadow,
                                  const GradCheckOptions& opt = {}) {
  if (params.size() != shadow.size())
    throw std::invalid_argument("grad_check: shadow parameter count mismatch");
  for (size_t p = 0; p < params.size(); ++p) {
    params[p]->set_requires_grad(true);
    params[p]->zero_grad();
    if (params[p]->numel() != shadow[p]->numel())
      throw std::invalid_argument("grad_check: shadow shape mismatch at parameter " + std::to_string(p));
  }

  Tape<T> tape;
  Tensor<T> loss = forward(tape);
  tape.backward(loss);

  // (param, element) probe list
  std::vector<std::pair<size_t, Index>> coords;
  if (opt.samples <= 0) {
    for (size_t p = 0; p < params.size(); ++p)
      for (Index i = 0; i < params[p]->numel(); ++i) coords.emplace_back(p, i);
  } else {
    Rng rng(opt.seed);
    Index total = 0;
    for (const auto* p : params) total += p->numel();
    for (Index k = 0; k < opt.samples; ++k) {
      Index flat = rng.uniform_int(0, total - 1);
      size_t p = 0;
      while (flat >= params[p]->numel()) flat -= params[p]->numel(), ++p;
      coords.emplace_back(p, flat);
    }
  }

  GradCheckReport report;
  report.coordinates = static_cast<Index>(coords.size());
  for (auto [p, i] : coords) {
    auto sv = shadow[p]->values();
    const double saved = sv[i];
    const double h = opt.step * std::max(1.0, std::abs(saved));
    sv[i] = saved + h;
    const double up = eval_ref();
    sv[i] = saved - h;
    const double down = eval_ref();
    sv[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = static_cast<double>(params[p]->grad()[i]);
    report.max_rel_error =
        std::max(report.max_rel_error, detail::rel_error(analytic, numeric, opt.denom_floor));
  }
  return report;
}

/// Same-precision check: finite differences run on the checked parameters
/// themselves. Intended for T = double, where FD noise is negligible.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(Tape<T>&)>& forward,
                           std::span<Tensor<T>* const> params, const GradCheckOptions& opt = {}) {
  static_assert(std::is_same_v<T, double>,
                "same-precision finite differences are only meaningful at f64; "
                "use grad_check_shadow for f32");
  std::vector<Tensor<double>*> shadow(params.begin(), params.end());
  auto eval_ref = [&forward]() {
    Tape<T> g(false);
    return static_cast<double>(forward(g).item());
  };
  return grad_check_shadow<T>(forward, params, eval_ref,
                              std::span<Tensor<double>* const>(shadow), opt);
}

}  // namespace ecnet
