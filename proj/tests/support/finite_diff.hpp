//
// Copyright 2026 The molgap Authors
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MOLGAP_TESTS_FINITE_DIFF_HPP
#define MOLGAP_TESTS_FINITE_DIFF_HPP

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "molgap/tensor.hpp"

// Central finite-difference oracle for gradient checks. It only ever calls
// the forward path, so it stays independent of the tape's backward sweep.

namespace molgap_tests {

inline double rel_err(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::string worst;  // "tensor[idx]" of the worst entry
};

// `loss_fn(tape)` must rebuild the whole computation from the current tensor
// contents and return a scalar loss. Deterministic re-evaluation is the
// caller's responsibility (e.g. reseed any RNG inside loss_fn).
template <typename LossFn>
GradCheck check_gradients(std::vector<std::pair<std::string, molgap::Tensor>> params,
                          LossFn&& loss_fn, double h = 1e-6, double floor = 1e-4) {
  using molgap::Tape;
  using molgap::Tensor;

  Tape tape;
  for (auto& [name, t] : params) tape.watch(t);
  Tensor loss = loss_fn(tape);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, t] : params) analytic.push_back(tape.grad(t));

  auto value = [&]() {
    Tape silent(false);
    return loss_fn(silent).value();
  };

  GradCheck result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& t = params[p].second;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t.data()[i];
      t.data()[i] = saved + h;
      const double up = value();
      t.data()[i] = saved - h;
      const double down = value();
      t.data()[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double err = rel_err(analytic[p][i], fd, floor);
      if (err > result.max_rel_err) {
        result.max_rel_err = err;
        result.worst = params[p].first + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace molgap_tests

#endif  // MOLGAP_TESTS_FINITE_DIFF_HPP
