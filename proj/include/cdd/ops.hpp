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

#ifndef CDD_OPS_HPP
#define CDD_OPS_HPP

#include <vector>

#include "cdd/autograd.hpp"

// Differentiable primitives over NHWC tensors. Every op records its own
// backward rule on the tape; see autograd.hpp.
namespace cdd::ad {

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);

// Value of `a`, no gradient.
template <typename T> Var<T> detach(const Var<T>& a);
// Forward value `hard`, backward passes the incoming gradient to `soft` unchanged.
template <typename T> Var<T> straight_through(const Tensor<T>& hard, const Var<T>& soft);

template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
// Rows [begin, end) along axis 0.
template <typename T> Var<T> slice_rows(const Var<T>& a, int begin, int end);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
// Row gather along axis 0: out[i] = a[index[i]].
template <typename T> Var<T> gather_rows(const Var<T>& a, const std::vector<int>& index);
template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
// [B, Z] -> [B, H, W, Z].
template <typename T> Var<T> tile_spatial(const Var<T>& z, int height, int width);
// out = sum_k alpha[k] * codes[k]; alpha has shape [K].
template <typename T> Var<T> linear_combination(const std::vector<Var<T>>& codes, const Var<T>& alpha);

// x: [B, in], weight: [in, out], bias: [out] (may be undefined).
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
// x: [N, H, W, Cin], weight: [K, K, Cin, Cout], bias: [Cout] (may be undefined).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int padding);
// Non-overlapping 2x2 stride-2 transposed convolution. weight: [Cin, 2, 2, Cout].
template <typename T> Var<T> conv_transpose2x2(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <typename T>
struct BatchNormStats {
    Tensor<T> running_mean;
    Tensor<T> running_var;
};

// While alive, training-mode batch norm still normalizes with batch
// statistics but leaves the running estimates untouched.
class FreezeRunningStatsGuard {
public:
    FreezeRunningStatsGuard();
    ~FreezeRunningStatsGuard();
    FreezeRunningStatsGuard(const FreezeRunningStatsGuard&) = delete;
    FreezeRunningStatsGuard& operator=(const FreezeRunningStatsGuard&) = delete;

private:
    bool previous_;
};
bool running_stats_frozen() noexcept;

// Normalizes over every axis except the last. In training mode batch
// statistics are used and the running estimates are updated.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats, bool training,
                  T momentum = T(0.1), T eps = T(1e-5));

template <typename T> Var<T> leaky_relu(const Var<T>& x, T slope);
template <typename T> Var<T> relu(const Var<T>& x) { return leaky_relu(x, T(0)); }
template <typename T> Var<T> sigmoid(const Var<T>& x);
// Softmax along the last axis.
template <typename T> Var<T> softmax(const Var<T>& x);
template <typename T> Var<T> max_pool2x2(const Var<T>& x);
// [N, H, W, C] -> [N, C].
template <typename T> Var<T> global_avg_pool(const Var<T>& x);

}  // namespace cdd::ad

#endif  // CDD_OPS_HPP
