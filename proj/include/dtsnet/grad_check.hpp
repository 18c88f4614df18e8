#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dtsnet/ops.hpp"

namespace dtsnet {

template <typename Scalar>
struct GradCheckResult {
  Scalar max_rel_error = 0;
  std::size_t worst_tensor = 0;
  Index worst_index = 0;
  Scalar analytic = 0;
  Scalar numeric = 0;
  std::size_t coordinates = 0;
};

/// Settings for central-difference checks. The relative error of one coordinate is
/// |a - n| / max(|a|, |n|, abs_floor).
template <typename Scalar>
struct GradCheckOptions {
  Scalar step = Scalar(1e-4);
  Scalar abs_floor = Scalar(1e-6);
  std::uint64_t seed = 1234;
  /// Upper bound on checked coordinates per tensor (0 = all). Picked with a seeded RNG.
  Index max_coords_per_tensor = 0;
};

namespace detail {

/// Reduces an arbitrary output to a scalar with fixed random weights so every output element
/// influences the check.
template <typename Scalar>
Var<Scalar> random_projection(const Var<Scalar>& out, std::uint64_t seed) {
  if (out.value().size() == 1) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor<Scalar> r(out.shape());
  for (Index i = 0; i < r.size(); ++i) r[i] = static_cast<Scalar>(nd(rng));
  return sum(mul(out, out.graph().constant(std::move(r))));
}

template <typename Scalar>
std::vector<Index> pick_coords(Index n, Index limit, std::mt19937_64& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[i] = i;
  if (limit > 0 && limit < n) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(limit));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

template <typename Scalar>
void update_worst(GradCheckResult<Scalar>& res, Scalar a, Scalar n, Scalar floor, std::size_t t,
                  Index i) {
  const Scalar denom = std::max({std::abs(a), std::abs(n), floor});
  const Scalar err = std::abs(a - n) / denom;
  ++res.coordinates;
  if (err > res.max_rel_error || !std::isfinite(err)) {
    res.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<Scalar>::infinity();
    res.worst_tensor = t;
    res.worst_index = i;
    res.analytic = a;
    res.numeric = n;
  }
}

}  // namespace detail

/// Central-difference check of d/d(inputs) of fn(graph, inputs), reduced by a fixed random
/// projection. Reports the worst coordinate over all inputs.
template <typename Scalar>
GradCheckResult<Scalar> grad_check(
    const std::function<Var<Scalar>(Graph<Scalar>&, const std::vector<Var<Scalar>>&)>& fn,
    std::vector<Tensor<Scalar>> inputs, const GradCheckOptions<Scalar>& opt = {}) {
  auto evaluate = [&](const std::vector<Tensor<Scalar>>& xs, bool track,
                      std::vector<Tensor<Scalar>>* grads) {
    Graph<Scalar> g;
    std::vector<Var<Scalar>> vars;
    for (const auto& x : xs) vars.push_back(g.input(x, track));
    auto loss = detail::random_projection(fn(g, vars), opt.seed);
    if (track) {
      g.backward(loss);
      for (const auto& v : vars) grads->push_back(g.grad(v));
    }
    return loss.value()[0];
  };

  std::vector<Tensor<Scalar>> analytic;
  evaluate(inputs, true, &analytic);

  GradCheckResult<Scalar> res;
  std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (Index i : detail::pick_coords<Scalar>(inputs[t].size(), opt.max_coords_per_tensor, rng)) {
      const Scalar orig = inputs[t][i];
      inputs[t][i] = orig + opt.step;
      const Scalar up = evaluate(inputs, false, nullptr);
      inputs[t][i] = orig - opt.step;
      const Scalar down = evaluate(inputs, false, nullptr);
      inputs[t][i] = orig;
      const Scalar numeric = (up - down) / (Scalar(2) * opt.step);
      detail::update_worst(res, analytic[t][i], numeric, opt.abs_floor, t, i);
    }
  }
  return res;
}

/// Central-difference check of d/d(params) of a scalar-or-projected fn(graph). Parameters are
/// bound through graph.param() inside fn.
template <typename Scalar>
GradCheckResult<Scalar> grad_check_params(const std::function<Var<Scalar>(Graph<Scalar>&)>& fn,
                                          ParamStore<Scalar>& store,
                                          const GradCheckOptions<Scalar>& opt = {}) {
  store.zero_grad();
  {
    Graph<Scalar> g;
    auto loss = detail::random_projection(fn(g), opt.seed);
    g.backward(loss);
  }
  std::vector<Tensor<Scalar>> analytic;
  for (std::size_t t = 0; t < store.size(); ++t) analytic.push_back(store[t].grad);

  auto evaluate = [&]() {
    Graph<Scalar> g;
    g.set_enabled(false);
    return detail::random_projection(fn(g), opt.seed).value()[0];
  };

  GradCheckResult<Scalar> res;
  std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t t = 0; t < store.size(); ++t) {
    auto& p = store[t];
    for (Index i : detail::pick_coords<Scalar>(p.value.size(), opt.max_coords_per_tensor, rng)) {
      const Scalar orig = p.value[i];
      p.value[i] = orig + opt.step;
      const Scalar up = evaluate();
      p.value[i] = orig - opt.step;
      const Scalar down = evaluate();
      p.value[i] = orig;
      detail::update_worst(res, analytic[t][i], (up - down) / (Scalar(2) * opt.step),
                           opt.abs_floor, t, i);
    }
  }
  store.zero_grad();
  return res;
}

}  // namespace dtsnet
