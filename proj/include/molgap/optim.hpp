//
// Copyright 2026 The molgap Authors
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MOLGAP_OPTIM_HPP
#define MOLGAP_OPTIM_HPP

#include <cmath>
#include <vector>

#include "molgap/errors.hpp"
#include "molgap/tensor.hpp"

namespace molgap {

// Adam with bias correction. Moment buffers are kept in the same order as
// the parameter list handed to adam_init.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m, v;
};

inline AdamState adam_init(const std::vector<Tensor>& params, double lr = 1e-3) {
  AdamState st;
  st.lr = lr;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const auto& p : params) {
    st.m.emplace_back(p.size(), 0.0);
    st.v.emplace_back(p.size(), 0.0);
  }
  return st;
}

/// One update: theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
inline void adam_step(std::vector<Tensor>& params, const std::vector<const std::vector<double>*>& grads,
                      AdamState& st) {
  if (params.size() != grads.size() || params.size() != st.m.size()) {
    throw ShapeMismatch("adam_step: parameter, gradient and state counts differ");
  }
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& theta = params[p].data();
    const auto& g = *grads[p];
    if (g.size() != theta.size() || st.m[p].size() != theta.size()) {
      throw ShapeMismatch("adam_step: gradient shape differs from parameter");
    }
    auto& m = st.m[p];
    auto& v = st.v[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= st.lr * m_hat / (std::sqrt(v_hat) + st.eps);
    }
  }
}

}  // namespace molgap

#endif  // MOLGAP_OPTIM_HPP
