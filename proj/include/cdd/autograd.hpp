/* Copyright 2026 The CDD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef CDD_AUTOGRAD_HPP
#define CDD_AUTOGRAD_HPP

#include <functional>
#include <memory>
#include <vector>

#include "cdd/tensor.hpp"

namespace cdd::ad {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into the inputs' grads.
    std::function<void(Node&)> backward_fn;

    // Zero-initialized gradient buffer matching value.
    T* grad_buffer();
    void accumulate(const Tensor<T>& g);
};

// Handle to a node of the reverse-mode tape. Copies share the node.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(node_); }
    [[nodiscard]] const Tensor<T>& value() const { return node_->value; }
    [[nodiscard]] Tensor<T>& mutable_value() { return node_->value; }
    [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
    [[nodiscard]] int dim(int axis) const { return node_->value.dim(axis); }
    [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
    [[nodiscard]] bool has_grad() const { return node_ && !node_->grad.empty(); }
    // Gradient after backward(); zeros if nothing flowed here.
    [[nodiscard]] Tensor<T> grad() const;
    [[nodiscard]] T item() const;

    void zero_grad();
    // Seeds d(self)/d(self) = 1; self must hold a single element.
    void backward() const;

    [[nodiscard]] const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

bool grad_enabled() noexcept;

// Disables tape construction in its scope (inference).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Builds the output node of an operation. The backward closure is only
// retained when some input requires a gradient and taping is enabled.
template <typename T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& inputs, std::function<void(Node<T>&)> backward_fn);

extern template struct Node<float>;
extern template struct Node<double>;
extern template class Var<float>;
extern template class Var<double>;

}  // namespace cdd::ad

#endif  // CDD_AUTOGRAD_HPP
