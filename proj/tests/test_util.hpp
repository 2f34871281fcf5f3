#pragma once

#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "smamba/array.hpp"
#include "smamba/gradcheck.hpp"
#include "smamba/ops.hpp"
#include "smamba/tape.hpp"

namespace smamba::testutil {

inline Array<double> random_array(Shape s, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0) {
  Array<double> a(std::move(s));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : a.data) v = dist(rng);
  return a;
}

// Finite-difference check for an op under test. `build` receives leaf vars
// for every parameter array and must return the op output. The loss is a
// random-weighted mean of the output so index errors in adjoints cannot
// cancel.
template <typename BuildFn>
FiniteDiffReport fd_check(std::vector<Array<double>> init, BuildFn build,
                          std::uint64_t weight_seed, double h = 1e-5) {
  auto params = std::make_shared<std::vector<Array<double>>>(std::move(init));
  auto weights = std::make_shared<Array<double>>();
  std::vector<Array<double>*> ptrs;
  for (auto& a : *params) ptrs.push_back(&a);

  auto f = [params, weights, build, weight_seed](std::vector<Array<double>>* grads) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    vars.reserve(params->size());
    for (auto& a : *params) vars.push_back(tape.leaf(a, true));
    Var<double> out = build(tape, vars);
    if (weights->numel() == 0) {
      std::mt19937_64 wrng(weight_seed);
      *weights = random_array(out.shape(), wrng);
    }
    Var<double> w = tape.leaf(*weights, false);
    Var<double> loss = reduce_mean(mul(out, w));
    const double value = loss.value()[0];
    if (grads) {
      tape.backward(loss);
      grads->clear();
      for (auto& v : vars) grads->push_back(tape.grad_of(v));
    }
    return value;
  };
  return finite_difference_check(f, ptrs, h);
}

}  // namespace smamba::testutil
