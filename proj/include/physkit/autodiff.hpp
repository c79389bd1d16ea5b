// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "physkit/params.hpp"
#include "physkit/tensor.hpp"

namespace physkit {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while its
/// tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  Tape& tape() const;
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recording of a forward computation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and the graph is acyclic by construction. While recording is off, values
/// are still computed but no backward rules are kept. A tape is
/// single-threaded; separate tapes may be used concurrently.
class Tape {
 public:
  /// Receives the tape and the id of the node whose gradient is ready.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void begin_recording() noexcept { recording_ = true; }
  void end_recording() noexcept { recording_ = false; }
  bool recording() const noexcept { return recording_; }

  Var constant(Tensor value);
  /// Leaf bound to a parameter. Binding the same parameter twice returns the
  /// same node, so shared modules accumulate into one gradient.
  Var param(Parameter& p);

  /// Appends an op result. `backward` runs only if the node needs a gradient.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, or nullptr when it does not need one.
  Tensor* grad(std::size_t id);
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Propagates d(loss)/d(node) to every recorded node and adds the result
  /// into the `grad` of each trainable parameter bound on this tape.
  void backward(const Var& loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool recording_;
};

/// Zeroes every gradient in `store`, then runs tape.backward(loss).
/// Frozen parameters keep an all-zero gradient.
void backward(const Var& loss, ParamStore& store);

// ---------------------------------------------------------------------------
// Plain tensor kernels.

/// [..., m, k] x [..., k, n]. Batch dimensions must match, or one side must be
/// a plain matrix that is broadcast over the other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Softmax over the last axis, stabilized by the row maximum.
Tensor softmax_rows(const Tensor& t);
double gelu(double x) noexcept;

// ---------------------------------------------------------------------------
// Differentiable ops. Binary element-wise ops broadcast when one operand's
// shape is a trailing suffix of the other's, or a single element.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// scale * a + shift, element-wise.
Var affine(const Var& a, double scale, double shift = 0.0);
Var matmul(const Var& a, const Var& b);
Var transpose_last2(const Var& a);
Var permute(const Var& a, const std::vector<std::size_t>& axes);
Var reshape(const Var& a, Shape shape);
Var concat(std::span<const Var> parts, std::size_t axis);
/// Sliding windows over the last axis: [..., T] -> [..., n, patch] with
/// n = (T - patch) / stride + 1.
Var unfold(const Var& x, std::size_t patch, std::size_t stride);
Var sum(const Var& a);
Var mean(const Var& a);
/// Mean over one axis, which is removed from the shape (rank-1 results keep
/// a single axis of size 1).
Var mean_axis(const Var& a, std::size_t axis);
Var softmax_rows(const Var& a);
Var sigmoid(const Var& a);
Var gelu(const Var& a);
/// Normalizes over the last axis, then applies per-channel gain and bias.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
/// Mean squared error between equally shaped tensors.
Var mse(const Var& prediction, const Var& target);

}  // namespace physkit
