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

#ifndef CDD_LAYERS_HPP
#define CDD_LAYERS_HPP

#include <string>
#include <vector>

#include "cdd/ops.hpp"
#include "cdd/rng.hpp"

namespace cdd::nets {

template <typename T>
struct Parameter {
    std::string name;
    ad::Var<T> var;
};

// Non-learned state that must be checkpointed (batch-norm running statistics).
template <typename T>
struct Buffer {
    std::string name;
    Tensor<T>* tensor;
};

template <typename T>
struct ParameterSet {
    std::vector<Parameter<T>> parameters;
    std::vector<Buffer<T>> buffers;
};

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& init, bool with_bias = true);

    ad::Var<T> operator()(const ad::Var<T>& x) const { return ad::conv2d(x, weight_, bias_, stride_, padding_); }
    void collect(ParameterSet<T>& out, const std::string& prefix);

private:
    ad::Var<T> weight_;
    ad::Var<T> bias_;
    int stride_ = 1;
    int padding_ = 0;
};

template <typename T>
class ConvTranspose2x2 {
public:
    ConvTranspose2x2() = default;
    ConvTranspose2x2(int in_channels, int out_channels, Rng& init);

    ad::Var<T> operator()(const ad::Var<T>& x) const { return ad::conv_transpose2x2(x, weight_, bias_); }
    void collect(ParameterSet<T>& out, const std::string& prefix);

private:
    ad::Var<T> weight_;
    ad::Var<T> bias_;
};

template <typename T>
class BatchNorm {
public:
    BatchNorm() = default;
    explicit BatchNorm(int channels);

    ad::Var<T> operator()(const ad::Var<T>& x, bool training);
    void collect(ParameterSet<T>& out, const std::string& prefix);

private:
    ad::Var<T> gamma_;
    ad::Var<T> beta_;
    ad::BatchNormStats<T> stats_;
};

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(int in_features, int out_features, Rng& init, double init_scale = 1.0);

    ad::Var<T> operator()(const ad::Var<T>& x) const { return ad::linear(x, weight_, bias_); }
    void collect(ParameterSet<T>& out, const std::string& prefix);

private:
    ad::Var<T> weight_;
    ad::Var<T> bias_;
};

// conv -> batch norm -> leaky ReLU
template <typename T>
class ConvBnAct {
public:
    ConvBnAct() = default;
    ConvBnAct(int in_channels, int out_channels, int kernel, int stride, T slope, Rng& init);

    ad::Var<T> operator()(const ad::Var<T>& x, bool training);
    void collect(ParameterSet<T>& out, const std::string& prefix);

private:
    Conv2d<T> conv_;
    BatchNorm<T> bn_;
    T slope_ = T(0);
};

}  // namespace cdd::nets

#endif  // CDD_LAYERS_HPP
