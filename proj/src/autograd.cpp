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

#include "cdd/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace cdd::ad {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
T* Node<T>::grad_buffer()
{
    if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape());
    return grad.data();
}

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g)
{
    if (g.numel() != value.numel()) {
        throw std::logic_error("gradient shape " + shape_str(g.shape()) + " does not match value " +
                               shape_str(value.shape()));
    }
    if (grad.empty()) {
        grad = g.reshaped(value.shape());
        return;
    }
    T* dst = grad.data();
    const T* src = g.data();
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>())
{
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Var<T>::grad() const
{
    if (!node_) throw std::logic_error("grad() on undefined Var");
    if (node_->grad.empty()) return Tensor<T>(node_->value.shape());
    return node_->grad;
}

template <typename T>
T Var<T>::item() const
{
    if (!node_ || node_->value.numel() != 1) {
        throw std::logic_error("item() requires a single-element Var");
    }
    return node_->value[0];
}

template <typename T>
void Var<T>::zero_grad()
{
    if (node_) node_->grad = Tensor<T>();
}

template <typename T>
void Var<T>::backward() const
{
    if (!node_ || node_->value.numel() != 1) {
        throw std::logic_error("backward() requires a single-element root");
    }
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order of the tape.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

template <typename T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& inputs, std::function<void(Node<T>&)> backward_fn)
{
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        for (const auto& in : inputs) {
            if (in.requires_grad()) {
                node->requires_grad = true;
                break;
            }
        }
    }
    if (node->requires_grad) {
        node->inputs.reserve(inputs.size());
        for (const auto& in : inputs) node->inputs.push_back(in.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Var<T>(std::move(node));
}

template struct Node<float>;
template struct Node<double>;
template class Var<float>;
template class Var<double>;
template Var<float> make_result(Tensor<float>, const std::vector<Var<float>>&, std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, const std::vector<Var<double>>&,
                                 std::function<void(Node<double>&)>);

}  // namespace cdd::ad
