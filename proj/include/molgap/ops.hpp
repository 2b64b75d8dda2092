//
// Copyright 2026 The molgap Authors
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MOLGAP_OPS_HPP
#define MOLGAP_OPS_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "molgap/errors.hpp"
#include "molgap/rng.hpp"
#include "molgap/tensor.hpp"

// Differentiable operations over Tensor. Every op computes its value eagerly
// and, when the tape is recording and at least one input is tracked, appends
// a node whose closure scatters the output adjoint back into the inputs.

namespace molgap {

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(std::string(op) + ": shapes " + a.shape_str() + " and " + b.shape_str() +
                        " differ");
  }
}

inline void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) {
    throw ShapeMismatch(std::string(op) + ": expected a matrix, got " + a.shape_str());
  }
}

inline void axpy(std::vector<double>& dst, const std::vector<double>& src, double scale) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace detail

// ---- elementwise binary ----

inline Tensor add(Tape& tp, const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (tp.recording() && (tp.tracked(a) || tp.tracked(b))) {
    const int an = tp.node_of(a), bn = tp.node_of(b);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, bn, on](Tape& t) {
      const auto& g = t.grad_at(on);
      if (an >= 0) detail::axpy(t.grad_at(an), g, 1.0);
      if (bn >= 0) detail::axpy(t.grad_at(bn), g, 1.0);
    });
  }
  return out;
}

inline Tensor sub(Tape& tp, const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (tp.recording() && (tp.tracked(a) || tp.tracked(b))) {
    const int an = tp.node_of(a), bn = tp.node_of(b);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, bn, on](Tape& t) {
      const auto& g = t.grad_at(on);
      if (an >= 0) detail::axpy(t.grad_at(an), g, 1.0);
      if (bn >= 0) detail::axpy(t.grad_at(bn), g, -1.0);
    });
  }
  return out;
}

inline Tensor mul(Tape& tp, const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (tp.recording() && (tp.tracked(a) || tp.tracked(b))) {
    const int an = tp.node_of(a), bn = tp.node_of(b);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, bn, on, a, b](Tape& t) {
      const auto& g = t.grad_at(on);
      if (an >= 0) {
        auto& ga = t.grad_at(an);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
      }
      if (bn >= 0) {
        auto& gb = t.grad_at(bn);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
      }
    });
  }
  return out;
}

// ---- elementwise with constants ----

inline Tensor add_scalar(Tape& tp, const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + c;
  if (tp.recording() && tp.tracked(a)) {
    const int an = tp.node_of(a);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, on](Tape& t) { detail::axpy(t.grad_at(an), t.grad_at(on), 1.0); });
  }
  return out;
}

inline Tensor mul_scalar(Tape& tp, const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * c;
  if (tp.recording() && tp.tracked(a)) {
    const int an = tp.node_of(a);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, on, c](Tape& t) { detail::axpy(t.grad_at(an), t.grad_at(on), c); });
  }
  return out;
}

/// Multiply every entry of `x` by a single-element tensor `s`.
inline Tensor scale(Tape& tp, const Tensor& x, const Tensor& s) {
  if (s.size() != 1) throw ShapeMismatch("scale: scale factor must have one element");
  const double sv = s.data()[0];
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = x.data()[i] * sv;
  if (tp.recording() && (tp.tracked(x) || tp.tracked(s))) {
    const int xn = tp.node_of(x), sn = tp.node_of(s);
    const int on = tp.emit(out);
    tp.set_backward(on, [xn, sn, on, x, sv](Tape& t) {
      const auto& g = t.grad_at(on);
      if (xn >= 0) detail::axpy(t.grad_at(xn), g, sv);
      if (sn >= 0) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x.data()[i];
        t.grad_at(sn)[0] += acc;
      }
    });
  }
  return out;
}

// ---- elementwise unary ----

inline Tensor relu(Tape& tp, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  if (tp.recording() && tp.tracked(a)) {
    const int an = tp.node_of(a);
    const int on = tp.emit(out);
    // Adjoint is 0 at negative inputs and at exactly 0.
    tp.set_backward(on, [an, on, a](Tape& t) {
      const auto& g = t.grad_at(on);
      auto& ga = t.grad_at(an);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (a.data()[i] > 0.0) ga[i] += g[i];
      }
    });
  }
  return out;
}

inline Tensor softplus(Tape& tp, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out.data()[i] = std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
  }
  if (tp.recording() && tp.tracked(a)) {
    const int an = tp.node_of(a);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, on, a](Tape& t) {
      const auto& g = t.grad_at(on);
      auto& ga = t.grad_at(an);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = a.data()[i];
        const double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        ga[i] += g[i] * sig;
      }
    });
  }
  return out;
}

inline Tensor exp(Tape& tp, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::exp(a.data()[i]);
  if (tp.recording() && tp.tracked(a)) {
    const int an = tp.node_of(a);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, on, out](Tape& t) {
      const auto& g = t.grad_at(on);
      auto& ga = t.grad_at(an);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * out.data()[i];
    });
  }
  return out;
}

inline Tensor log(Tape& tp, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::log(a.data()[i]);
  if (tp.recording() && tp.tracked(a)) {
    const int an = tp.node_of(a);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, on, a](Tape& t) {
      const auto& g = t.grad_at(on);
      auto& ga = t.grad_at(an);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a.data()[i];
    });
  }
  return out;
}

inline Tensor sqrt(Tape& tp, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::sqrt(a.data()[i]);
  if (tp.recording() && tp.tracked(a)) {
    const int an = tp.node_of(a);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, on, out](Tape& t) {
      const auto& g = t.grad_at(on);
      auto& ga = t.grad_at(an);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 0.5 / out.data()[i];
    });
  }
  return out;
}

/// Pointwise min/max into [lo, hi]. Adjoint is identity strictly inside the
/// interval and zero elsewhere.
inline Tensor clamp(Tape& tp, const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw InvalidBounds("clamp: lo must not exceed hi");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::min(std::max(a.data()[i], lo), hi);
  if (tp.recording() && tp.tracked(a)) {
    const int an = tp.node_of(a);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, on, a, lo, hi](Tape& t) {
      const auto& g = t.grad_at(on);
      auto& ga = t.grad_at(an);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = a.data()[i];
        if (x > lo && x < hi) ga[i] += g[i];
      }
    });
  }
  return out;
}

// ---- matrix ops ----

inline Tensor matmul(Tape& tp, const Tensor& a, const Tensor& b) {
  detail::require_matrix("matmul", a);
  detail::require_matrix("matmul", b);
  if (a.dim(1) != b.dim(0)) {
    throw ShapeMismatch("matmul: inner dimensions disagree, " + a.shape_str() + " vs " +
                        b.shape_str());
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = out.data().data();
    for (int i = 0; i < m; ++i) {
      for (int p = 0; p < k; ++p) {
        const double av = A[static_cast<std::size_t>(i) * k + p];
        const double* Brow = B + static_cast<std::size_t>(p) * n;
        double* Crow = C + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) Crow[j] += av * Brow[j];
      }
    }
  }
  if (tp.recording() && (tp.tracked(a) || tp.tracked(b))) {
    const int an = tp.node_of(a), bn = tp.node_of(b);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, bn, on, a, b, m, k, n](Tape& t) {
      const auto& g = t.grad_at(on);
      if (an >= 0) {
        // dA = dC * B^T
        auto& ga = t.grad_at(an);
        const double* B = b.data().data();
        for (int i = 0; i < m; ++i) {
          const double* Grow = g.data() + static_cast<std::size_t>(i) * n;
          for (int p = 0; p < k; ++p) {
            const double* Brow = B + static_cast<std::size_t>(p) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += Grow[j] * Brow[j];
            ga[static_cast<std::size_t>(i) * k + p] += acc;
          }
        }
      }
      if (bn >= 0) {
        // dB = A^T * dC
        auto& gb = t.grad_at(bn);
        const double* A = a.data().data();
        for (int i = 0; i < m; ++i) {
          const double* Grow = g.data() + static_cast<std::size_t>(i) * n;
          for (int p = 0; p < k; ++p) {
            const double av = A[static_cast<std::size_t>(i) * k + p];
            double* GBrow = gb.data() + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) GBrow[j] += av * Grow[j];
          }
        }
      }
    });
  }
  return out;
}

inline Tensor transpose(Tape& tp, const Tensor& a) {
  detail::require_matrix("transpose", a);
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  if (tp.recording() && tp.tracked(a)) {
    const int an = tp.node_of(a);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, on, m, n](Tape& t) {
      const auto& g = t.grad_at(on);
      auto& ga = t.grad_at(an);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

inline Tensor reshape(Tape& tp, const Tensor& a, std::vector<int> shape) {
  Tensor out = Tensor::from(std::move(shape), a.data());
  if (out.size() != a.size()) throw ShapeMismatch("reshape: element count changes");
  if (tp.recording() && tp.tracked(a)) {
    const int an = tp.node_of(a);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, on](Tape& t) { detail::axpy(t.grad_at(an), t.grad_at(on), 1.0); });
  }
  return out;
}

inline Tensor concat_cols(Tape& tp, const Tensor& a, const Tensor& b) {
  detail::require_matrix("concat_cols", a);
  detail::require_matrix("concat_cols", b);
  if (a.dim(0) != b.dim(0)) throw ShapeMismatch("concat_cols: row counts differ");
  const int n = a.dim(0), da = a.dim(1), db = b.dim(1);
  Tensor out = Tensor::zeros({n, da + db});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < da; ++j) out.at(i, j) = a.at(i, j);
    for (int j = 0; j < db; ++j) out.at(i, da + j) = b.at(i, j);
  }
  if (tp.recording() && (tp.tracked(a) || tp.tracked(b))) {
    const int an = tp.node_of(a), bn = tp.node_of(b);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, bn, on, n, da, db](Tape& t) {
      const auto& g = t.grad_at(on);
      const std::size_t stride = static_cast<std::size_t>(da + db);
      if (an >= 0) {
        auto& ga = t.grad_at(an);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < da; ++j) ga[static_cast<std::size_t>(i) * da + j] += g[i * stride + j];
      }
      if (bn >= 0) {
        auto& gb = t.grad_at(bn);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < db; ++j)
            gb[static_cast<std::size_t>(i) * db + j] += g[i * stride + da + j];
      }
    });
  }
  return out;
}

inline Tensor slice_rows(Tape& tp, const Tensor& a, int start, int count) {
  detail::require_matrix("slice_rows", a);
  if (start < 0 || count < 0 || start + count > a.dim(0)) {
    throw IndexOutOfRange("slice_rows: range outside matrix");
  }
  const int d = a.dim(1);
  Tensor out = Tensor::zeros({count, d});
  std::copy_n(a.data().begin() + static_cast<std::size_t>(start) * d,
              static_cast<std::size_t>(count) * d, out.data().begin());
  if (tp.recording() && tp.tracked(a)) {
    const int an = tp.node_of(a);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, on, start, count, d](Tape& t) {
      const auto& g = t.grad_at(on);
      auto& ga = t.grad_at(an);
      for (std::size_t i = 0; i < static_cast<std::size_t>(count) * d; ++i) {
        ga[static_cast<std::size_t>(start) * d + i] += g[i];
      }
    });
  }
  return out;
}

inline Tensor vstack(Tape& tp, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw EmptyInput("vstack: no tensors given");
  const int d = parts.front().dim(1);
  int rows = 0;
  for (const auto& p : parts) {
    detail::require_matrix("vstack", p);
    if (p.dim(1) != d) throw ShapeMismatch("vstack: column counts differ");
    rows += p.dim(0);
  }
  Tensor out = Tensor::zeros({rows, d});
  std::size_t offset = 0;
  bool any_tracked = false;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + offset);
    offset += p.size();
    any_tracked = any_tracked || tp.tracked(p);
  }
  if (tp.recording() && any_tracked) {
    std::vector<int> in_nodes;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
      in_nodes.push_back(tp.node_of(p));
      sizes.push_back(p.size());
    }
    const int on = tp.emit(out);
    tp.set_backward(on, [in_nodes, sizes, on](Tape& t) {
      const auto& g = t.grad_at(on);
      std::size_t pos = 0;
      for (std::size_t idx = 0; idx < in_nodes.size(); ++idx) {
        if (in_nodes[idx] >= 0) {
          auto& gp = t.grad_at(in_nodes[idx]);
          for (std::size_t i = 0; i < sizes[idx]; ++i) gp[i] += g[pos + i];
        }
        pos += sizes[idx];
      }
    });
  }
  return out;
}

// ---- gather / scatter ----

/// Row gather: out[i, :] = table[ids[i], :]. The adjoint accumulates back
/// into the looked-up rows, so repeated ids sum.
inline Tensor gather_rows(Tape& tp, const Tensor& table, const std::vector<int>& ids) {
  detail::require_matrix("gather_rows", table);
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= v) throw IndexOutOfRange("gather_rows: id " + std::to_string(id));
  }
  Tensor out = Tensor::zeros({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.data().begin() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data().begin() + i * d);
  }
  if (tp.recording() && tp.tracked(table)) {
    const int tn = tp.node_of(table);
    const int on = tp.emit(out);
    tp.set_backward(on, [tn, on, ids, d](Tape& t) {
      const auto& g = t.grad_at(on);
      auto& gt = t.grad_at(tn);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (int j = 0; j < d; ++j) gt[static_cast<std::size_t>(ids[i]) * d + j] += g[i * d + j];
      }
    });
  }
  return out;
}

/// out[s, :] = sum of values[i, :] over i with segment_ids[i] == s.
/// Empty segments stay zero.
inline Tensor segment_sum(Tape& tp, const Tensor& values, const std::vector<int>& segment_ids,
                          int num_segments) {
  detail::require_matrix("segment_sum", values);
  if (static_cast<std::size_t>(values.dim(0)) != segment_ids.size()) {
    throw ShapeMismatch("segment_sum: one segment id per row required");
  }
  for (int s : segment_ids) {
    if (s < 0 || s >= num_segments) throw IndexOutOfRange("segment_sum: id " + std::to_string(s));
  }
  const int d = values.dim(1);
  Tensor out = Tensor::zeros({num_segments, d});
  for (std::size_t i = 0; i < segment_ids.size(); ++i) {
    const double* src = values.data().data() + i * d;
    double* dst = out.data().data() + static_cast<std::size_t>(segment_ids[i]) * d;
    for (int j = 0; j < d; ++j) dst[j] += src[j];
  }
  if (tp.recording() && tp.tracked(values)) {
    const int vn = tp.node_of(values);
    const int on = tp.emit(out);
    tp.set_backward(on, [vn, on, segment_ids, d](Tape& t) {
      const auto& g = t.grad_at(on);
      auto& gv = t.grad_at(vn);
      for (std::size_t i = 0; i < segment_ids.size(); ++i) {
        const double* src = g.data() + static_cast<std::size_t>(segment_ids[i]) * d;
        for (int j = 0; j < d; ++j) gv[i * d + j] += src[j];
      }
    });
  }
  return out;
}

// ---- rowwise softmax ----

inline Tensor softmax_rows(Tape& tp, const Tensor& x) {
  detail::require_matrix("softmax_rows", x);
  const int n = x.dim(0), k = x.dim(1);
  Tensor out = Tensor::zeros({n, k});
  for (int i = 0; i < n; ++i) {
    double mx = x.at(i, 0);
    for (int j = 1; j < k; ++j) mx = std::max(mx, x.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < k; ++j) {
      const double e = std::exp(x.at(i, j) - mx);
      out.at(i, j) = e;
      denom += e;
    }
    for (int j = 0; j < k; ++j) out.at(i, j) /= denom;
  }
  if (tp.recording() && tp.tracked(x)) {
    const int xn = tp.node_of(x);
    const int on = tp.emit(out);
    tp.set_backward(on, [xn, on, out, n, k](Tape& t) {
      const auto& g = t.grad_at(on);
      auto& gx = t.grad_at(xn);
      for (int i = 0; i < n; ++i) {
        const double* y = out.data().data() + static_cast<std::size_t>(i) * k;
        const double* gr = g.data() + static_cast<std::size_t>(i) * k;
        double dot = 0.0;
        for (int j = 0; j < k; ++j) dot += gr[j] * y[j];
        for (int j = 0; j < k; ++j) gx[static_cast<std::size_t>(i) * k + j] += y[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

// ---- reductions & losses ----

inline Tensor sum(Tape& tp, const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (tp.recording() && tp.tracked(a)) {
    const int an = tp.node_of(a);
    const int on = tp.emit(out);
    tp.set_backward(on, [an, on](Tape& t) {
      const double g = t.grad_at(on)[0];
      for (auto& v : t.grad_at(an)) v += g;
    });
  }
  return out;
}

/// Mean absolute error. Adjoint w.r.t. pred is sign(pred - target) / n, zero
/// at exact ties.
inline Tensor l1_loss(Tape& tp, const Tensor& pred, const Tensor& target) {
  detail::require_same_shape("l1_loss", pred, target);
  const std::size_t n = pred.size();
  if (n == 0) throw EmptyInput("l1_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(pred.data()[i] - target.data()[i]);
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  if (tp.recording() && (tp.tracked(pred) || tp.tracked(target))) {
    const int pn = tp.node_of(pred), tn = tp.node_of(target);
    const int on = tp.emit(out);
    tp.set_backward(on, [pn, tn, on, pred, target, n](Tape& t) {
      const double g = t.grad_at(on)[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double diff = pred.data()[i] - target.data()[i];
        const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        if (pn >= 0) t.grad_at(pn)[i] += g * s;
        if (tn >= 0) t.grad_at(tn)[i] -= g * s;
      }
    });
  }
  return out;
}

/// Closed-form KL divergence between diagonal Gaussians N(mu, sigma^2) and a
/// zero-mean prior N(0, prior_sigma^2), summed over all entries.
inline Tensor kl_gaussian(Tape& tp, const Tensor& mu, const Tensor& sigma, double prior_sigma) {
  detail::require_same_shape("kl_gaussian", mu, sigma);
  if (!(prior_sigma > 0.0)) throw NonPositiveSigma("kl_gaussian: prior_sigma must be positive");
  for (double s : sigma.data()) {
    if (!(s > 0.0)) throw NonPositiveSigma("kl_gaussian: sigma must be positive");
  }
  const double p2 = prior_sigma * prior_sigma;
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double m = mu.data()[i], s = sigma.data()[i];
    acc += std::log(prior_sigma / s) + (s * s + m * m) / (2.0 * p2) - 0.5;
  }
  Tensor out = Tensor::scalar(acc);
  if (tp.recording() && (tp.tracked(mu) || tp.tracked(sigma))) {
    const int mn = tp.node_of(mu), sn = tp.node_of(sigma);
    const int on = tp.emit(out);
    tp.set_backward(on, [mn, sn, on, mu, sigma, p2](Tape& t) {
      const double g = t.grad_at(on)[0];
      if (mn >= 0) {
        auto& gm = t.grad_at(mn);
        for (std::size_t i = 0; i < mu.size(); ++i) gm[i] += g * mu.data()[i] / p2;
      }
      if (sn >= 0) {
        auto& gs = t.grad_at(sn);
        for (std::size_t i = 0; i < sigma.size(); ++i) {
          const double s = sigma.data()[i];
          gs[i] += g * (s / p2 - 1.0 / s);
        }
      }
    });
  }
  return out;
}

// ---- affine helpers ----

/// Add a length-d bias vector to every row of an n-by-d matrix.
inline Tensor add_rowvec(Tape& tp, const Tensor& x, const Tensor& b) {
  detail::require_matrix("add_rowvec", x);
  if (b.rank() != 1 || b.dim(0) != x.dim(1)) {
    throw ShapeMismatch("add_rowvec: bias " + b.shape_str() + " does not match " + x.shape_str());
  }
  const int n = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) + b.at(j);
  if (tp.recording() && (tp.tracked(x) || tp.tracked(b))) {
    const int xn = tp.node_of(x), bn = tp.node_of(b);
    const int on = tp.emit(out);
    tp.set_backward(on, [xn, bn, on, n, d](Tape& t) {
      const auto& g = t.grad_at(on);
      if (xn >= 0) detail::axpy(t.grad_at(xn), g, 1.0);
      if (bn >= 0) {
        auto& gb = t.grad_at(bn);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j) gb[j] += g[static_cast<std::size_t>(i) * d + j];
      }
    });
  }
  return out;
}

/// x[n×in] * w[in×out] + b[out]
inline Tensor linear(Tape& tp, const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(tp, matmul(tp, x, w), b);
}

// ---- batch normalization ----

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Learnable scale/shift plus running statistics for one normalized width.
/// The running statistics are buffers, not trainable parameters.
struct BatchNorm {
  Tensor gamma, beta, running_mean, running_var;

  static BatchNorm make(int channels) {
    return {Tensor::full({channels}, 1.0), Tensor::zeros({channels}), Tensor::zeros({channels}),
            Tensor::full({channels}, 1.0)};
  }
};

/// Train mode normalizes by the biased (n-denominator) batch statistics and
/// updates the running statistics in place; eval mode uses the running
/// statistics and leaves them untouched.
inline Tensor batch_norm(Tape& tp, const Tensor& x, BatchNorm& bn, bool train) {
  detail::require_matrix("batch_norm", x);
  const int n = x.dim(0), d = x.dim(1);
  if (n < 1) throw BatchTooSmall("batch_norm: empty batch");
  if (train && n < 2) throw BatchTooSmall("batch_norm: train mode needs at least 2 rows");
  if (bn.gamma.dim(0) != d) throw ShapeMismatch("batch_norm: state width mismatch");

  Tensor out = Tensor::zeros({n, d});
  std::vector<double> invstd(static_cast<std::size_t>(d));
  Tensor xhat = Tensor::zeros({n, d});
  if (train) {
    for (int j = 0; j < d; ++j) {
      double mean = 0.0;
      for (int i = 0; i < n; ++i) mean += x.at(i, j);
      mean /= n;
      double var = 0.0;
      for (int i = 0; i < n; ++i) {
        const double c = x.at(i, j) - mean;
        var += c * c;
      }
      var /= n;
      const double is = 1.0 / std::sqrt(var + kBatchNormEps);
      invstd[static_cast<std::size_t>(j)] = is;
      for (int i = 0; i < n; ++i) {
        const double h = (x.at(i, j) - mean) * is;
        xhat.at(i, j) = h;
        out.at(i, j) = bn.gamma.at(j) * h + bn.beta.at(j);
      }
      bn.running_mean.at(j) = (1.0 - kBatchNormMomentum) * bn.running_mean.at(j) + kBatchNormMomentum * mean;
      bn.running_var.at(j) = (1.0 - kBatchNormMomentum) * bn.running_var.at(j) + kBatchNormMomentum * var;
    }
  } else {
    for (int j = 0; j < d; ++j) {
      const double is = 1.0 / std::sqrt(bn.running_var.at(j) + kBatchNormEps);
      invstd[static_cast<std::size_t>(j)] = is;
      for (int i = 0; i < n; ++i) {
        const double h = (x.at(i, j) - bn.running_mean.at(j)) * is;
        xhat.at(i, j) = h;
        out.at(i, j) = bn.gamma.at(j) * h + bn.beta.at(j);
      }
    }
  }

  if (tp.recording() && (tp.tracked(x) || tp.tracked(bn.gamma) || tp.tracked(bn.beta))) {
    const int xn = tp.node_of(x), gn = tp.node_of(bn.gamma), bnb = tp.node_of(bn.beta);
    const Tensor gamma = bn.gamma;
    const int on = tp.emit(out);
    tp.set_backward(on, [xn, gn, bnb, on, xhat, invstd, gamma, n, d, train](Tape& t) {
      const auto& g = t.grad_at(on);
      if (gn >= 0) {
        auto& gg = t.grad_at(gn);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j) gg[j] += g[static_cast<std::size_t>(i) * d + j] * xhat.at(i, j);
      }
      if (bnb >= 0) {
        auto& gb = t.grad_at(bnb);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j) gb[j] += g[static_cast<std::size_t>(i) * d + j];
      }
      if (xn >= 0) {
        auto& gx = t.grad_at(xn);
        if (train) {
          // Batch statistics depend on x, so the adjoint removes the
          // per-column mean components.
          for (int j = 0; j < d; ++j) {
            double mean_dy = 0.0, mean_dy_xhat = 0.0;
            for (int i = 0; i < n; ++i) {
              const double dy = g[static_cast<std::size_t>(i) * d + j] * gamma.at(j);
              mean_dy += dy;
              mean_dy_xhat += dy * xhat.at(i, j);
            }
            mean_dy /= n;
            mean_dy_xhat /= n;
            for (int i = 0; i < n; ++i) {
              const double dy = g[static_cast<std::size_t>(i) * d + j] * gamma.at(j);
              gx[static_cast<std::size_t>(i) * d + j] +=
                  invstd[static_cast<std::size_t>(j)] * (dy - mean_dy - xhat.at(i, j) * mean_dy_xhat);
            }
          }
        } else {
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
              gx[static_cast<std::size_t>(i) * d + j] +=
                  g[static_cast<std::size_t>(i) * d + j] * gamma.at(j) * invstd[static_cast<std::size_t>(j)];
        }
      }
    });
  }
  return out;
}

// ---- dropout ----

/// Inverted dropout. Identity when rate is 0 or in eval mode.
inline Tensor dropout(Tape& tp, const Tensor& x, double rate, bool train, Rng& rng) {
  if (!train || rate <= 0.0) return x;
  if (rate >= 1.0) throw InvalidBounds("dropout: rate must be below 1");
  const double keep = 1.0 - rate;
  Tensor mask = Tensor::zeros(x.shape());
  for (auto& m : mask.data()) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return mul(tp, x, mask);
}

}  // namespace molgap

#endif  // MOLGAP_OPS_HPP
