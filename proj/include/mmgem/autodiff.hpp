/*
 * Copyright (c) 2026 The mmgem Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>

#include "mmgem/tensor.hpp"

namespace mmgem {

template <class T>
class Tape;

/// Handle to a value recorded on a Tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

/// Linear record of differentiable operations.
///
/// Nodes are appended in execution order; backward() replays them in reverse,
/// visiting each node once. Leaves bound to a Parameter flush their gradient
/// into Parameter::grad, where it accumulates until the caller clears it.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t)>;

  Tape() = default;
  /// With `record_gradients` false, parameter leaves never request gradients,
  /// so no backward closures are kept (inference mode).
  explicit Tape(bool record_gradients) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-differentiable input.
  Var<T> constant(Tensor<T> value) { return push("constant", std::move(value), false, {}); }

  /// Leaf bound to a parameter. Frozen parameters do not request gradients.
  Var<T> param(Parameter<T>& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var<T>{this, it->second};
    Node node;
    node.external = &p.value;
    node.param = &p;
    node.requires_grad = record_ && p.trainable;
    node.op = "param:" + p.name;
    nodes_.push_back(std::move(node));
    const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
    bound_.emplace(&p, id);
    return Var<T>{this, id};
  }

  /// Records an op result. `backward` is dropped when no input needs gradients.
  Var<T> push(const char* op, Tensor<T> value, bool requires_grad, Backward backward) {
    if (!value.all_finite())
      throw NumericError(std::string("non-finite value produced by ") + op);
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    if (requires_grad) node.backward = std::move(backward);
    node.op = op;
    nodes_.push_back(std::move(node));
    return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).get(); }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::uint32_t id) const { return nodes_.at(id).op; }

  /// Output gradient of node `id` during backward (empty if nothing flowed in).
  const Tensor<T>& grad(std::uint32_t id) const { return nodes_[id].grad; }

  /// Gradient buffer of `v`, zero-initialised on first access.
  Tensor<T>& grad_acc(Var<T> v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.get().shape());
    return n.grad;
  }

  /// Reverse sweep from a scalar. Returns the number of nodes replayed.
  std::size_t backward(Var<T> loss, const std::function<void(std::uint32_t)>& visit = {}) {
    if (value(loss).numel() != 1)
      throw ShapeError("backward: loss must be a scalar, got " + shape_str(value(loss).shape()));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_acc(loss)[0] = T(1);
    std::size_t replayed = 0;
    for (std::int64_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (visit) visit(static_cast<std::uint32_t>(i));
      ++replayed;
      if (n.grad.empty() || !n.requires_grad) continue;
      if (n.backward) n.backward(*this, static_cast<std::uint32_t>(i));
      if (n.param != nullptr) {
        auto& dst = n.param->grad;
        if (dst.shape() != n.grad.shape()) dst = Tensor<T>(n.grad.shape());
        for (std::size_t k = 0; k < dst.numel(); ++k) dst[k] += n.grad[k];
      }
    }
    return replayed;
  }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    Backward backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    std::string op;
    const Tensor<T>& get() const { return external ? *external : value; }
  };

  bool record_ = true;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::uint32_t> bound_;
};

}  // namespace mmgem
