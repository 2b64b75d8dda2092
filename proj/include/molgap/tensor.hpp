//
// Copyright 2026 The molgap Authors
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MOLGAP_TENSOR_HPP
#define MOLGAP_TENSOR_HPP

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "molgap/errors.hpp"

namespace molgap {

// Dense row-major tensor of 64-bit floats. Tensor is a cheap handle: copies
// share the underlying buffer, clone() makes a deep copy. Only parameter
// initialization and the optimizer mutate data in place; everything else
// creates fresh tensors, so sharing is safe within a training step.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape) {
    return Tensor(std::move(shape), std::vector<double>());
  }

  static Tensor full(std::vector<int> shape, double value) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : t.data()) x = value;
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<double> values) {
    Tensor t(std::move(shape), std::move(values));
    if (t.size() != t.rec_->data.size()) {
      throw ShapeMismatch("Tensor::from: data length does not match shape");
    }
    return t;
  }

  static Tensor scalar(double value) { return from({1}, {value}); }

  bool defined() const { return rec_ != nullptr; }

  const std::vector<int>& shape() const { return rec_->shape; }
  int rank() const { return static_cast<int>(rec_->shape.size()); }
  int dim(int i) const { return rec_->shape.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return rec_->data.size(); }

  std::vector<double>& data() { return rec_->data; }
  const std::vector<double>& data() const { return rec_->data; }

  double& at(int i) { return rec_->data.at(static_cast<std::size_t>(i)); }
  double at(int i) const { return rec_->data.at(static_cast<std::size_t>(i)); }
  double& at(int r, int c) { return rec_->data.at(flat(r, c)); }
  double at(int r, int c) const { return rec_->data.at(flat(r, c)); }

  /// Value of a single-element tensor.
  double value() const {
    if (size() != 1) throw NotScalar("value(): tensor has " + std::to_string(size()) + " elements");
    return rec_->data[0];
  }

  Tensor clone() const {
    Tensor t;
    t.rec_ = std::make_shared<Rec>();
    t.rec_->shape = rec_->shape;
    t.rec_->data = rec_->data;
    return t;
  }

  bool same_shape(const Tensor& o) const { return rec_->shape == o.rec_->shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < rec_->shape.size(); ++i) os << (i ? "x" : "") << rec_->shape[i];
    os << ']';
    return os.str();
  }

 private:
  struct Rec {
    std::vector<int> shape;
    std::vector<double> data;
    std::uint64_t tape_gen = 0;  // generation of the tape this node belongs to
    int node = -1;               // node id on that tape, -1 when untracked
  };

  Tensor(std::vector<int> shape, std::vector<double> values) : rec_(std::make_shared<Rec>()) {
    rec_->shape = std::move(shape);
    std::size_t n = 1;
    for (int d : rec_->shape) {
      if (d < 0) throw ShapeMismatch("negative dimension in tensor shape");
      n *= static_cast<std::size_t>(d);
    }
    if (values.empty()) {
      rec_->data.assign(n, 0.0);
    } else {
      rec_->data = std::move(values);
    }
  }

  std::size_t flat(int r, int c) const {
    if (rank() != 2) throw ShapeMismatch("2-d access on tensor of rank " + std::to_string(rank()));
    if (r < 0 || r >= dim(0) || c < 0 || c >= dim(1)) {
      throw IndexOutOfRange("tensor index out of range");
    }
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(dim(1)) +
           static_cast<std::size_t>(c);
  }

  std::shared_ptr<Rec> rec_;
  friend class Tape;
};

// Reverse-mode tape. Operations append nodes in topological order; backward()
// walks them in reverse, accumulating adjoints into per-node gradient buffers.
// reset() starts a new generation, which invalidates node ids held by tensors
// from earlier passes.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording), gen_(next_generation()) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  /// Register a leaf (typically a parameter) so it accumulates gradients.
  void watch(Tensor& t) {
    if (!recording_) return;
    if (tracked(t)) return;
    t.rec_->tape_gen = gen_;
    t.rec_->node = allocate(t.size(), nullptr);
  }

  bool tracked(const Tensor& t) const {
    return t.defined() && t.rec_->node >= 0 && t.rec_->tape_gen == gen_;
  }

  /// Node id of `t` on this tape, or -1 when the tensor is a constant here.
  int node_of(const Tensor& t) const { return tracked(t) ? t.rec_->node : -1; }

  /// Append an op result. Returns the new node id and links `out` to it.
  int emit(Tensor& out) {
    out.rec_->tape_gen = gen_;
    out.rec_->node = allocate(out.size(), nullptr);
    return out.rec_->node;
  }

  void set_backward(int node, std::function<void(Tape&)> fn) {
    nodes_.at(static_cast<std::size_t>(node)).back = std::move(fn);
  }

  /// Gradient buffer of a node; ops use this inside backward closures.
  std::vector<double>& grad_at(int node) { return grads_.at(static_cast<std::size_t>(node)); }

  /// Gradient of a tracked tensor after backward(); zeros when unreached.
  const std::vector<double>& grad(const Tensor& t) const {
    if (!tracked(t)) throw DeadTape("grad(): tensor is not tracked on this tape");
    return grads_.at(static_cast<std::size_t>(t.rec_->node));
  }

  /// Reverse sweep from a scalar loss. Every tracked tensor reachable from
  /// the loss receives its full adjoint; unreachable ones keep zeros.
  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw NotScalar("backward(): loss must be a single-element tensor");
    }
    if (!tracked(loss)) throw DeadTape("backward(): loss is not on a live tape");
    grads_[static_cast<std::size_t>(loss.rec_->node)][0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].back) nodes_[i].back(*this);
    }
  }

  /// Drop all nodes and gradients and start a new generation.
  void reset() {
    nodes_.clear();
    grads_.clear();
    gen_ = next_generation();
  }

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    std::function<void(Tape&)> back;  // null for leaves
  };

  int allocate(std::size_t numel, std::function<void(Tape&)> fn) {
    nodes_.push_back(Node{std::move(fn)});
    grads_.emplace_back(numel, 0.0);
    return static_cast<int>(nodes_.size()) - 1;
  }

  static std::uint64_t next_generation() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool recording_;
  std::uint64_t gen_;
};

}  // namespace molgap

#endif  // MOLGAP_TENSOR_HPP
