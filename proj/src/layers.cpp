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

#include "cdd/layers.hpp"

#include <cmath>

namespace cdd::nets {

namespace {

template <typename T>
ad::Var<T> normal_param(Shape shape, double stddev, Rng& rng)
{
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(stddev * rng.normal());
    return ad::Var<T>(std::move(t), true);
}

template <typename T>
ad::Var<T> constant_param(Shape shape, T value)
{
    return ad::Var<T>(Tensor<T>(std::move(shape), value), true);
}

}  // namespace

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& init,
                  bool with_bias)
    : weight_(normal_param<T>({kernel, kernel, in_channels, out_channels},
                              std::sqrt(2.0 / (kernel * kernel * in_channels)), init)),
      stride_(stride),
      padding_(padding)
{
    if (with_bias) bias_ = constant_param<T>({out_channels}, T(0));
}

template <typename T>
void Conv2d<T>::collect(ParameterSet<T>& out, const std::string& prefix)
{
    out.parameters.push_back({prefix + ".weight", weight_});
    if (bias_.defined()) out.parameters.push_back({prefix + ".bias", bias_});
}

template <typename T>
ConvTranspose2x2<T>::ConvTranspose2x2(int in_channels, int out_channels, Rng& init)
    : weight_(normal_param<T>({in_channels, 2, 2, out_channels}, std::sqrt(2.0 / in_channels), init)),
      bias_(constant_param<T>({out_channels}, T(0)))
{
}

template <typename T>
void ConvTranspose2x2<T>::collect(ParameterSet<T>& out, const std::string& prefix)
{
    out.parameters.push_back({prefix + ".weight", weight_});
    out.parameters.push_back({prefix + ".bias", bias_});
}

template <typename T>
BatchNorm<T>::BatchNorm(int channels)
    : gamma_(constant_param<T>({channels}, T(1))), beta_(constant_param<T>({channels}, T(0)))
{
    stats_.running_mean = Tensor<T>({channels}, T(0));
    stats_.running_var = Tensor<T>({channels}, T(1));
}

template <typename T>
ad::Var<T> BatchNorm<T>::operator()(const ad::Var<T>& x, bool training)
{
    return ad::batch_norm(x, gamma_, beta_, stats_, training);
}

template <typename T>
void BatchNorm<T>::collect(ParameterSet<T>& out, const std::string& prefix)
{
    out.parameters.push_back({prefix + ".gamma", gamma_});
    out.parameters.push_back({prefix + ".beta", beta_});
    out.buffers.push_back({prefix + ".running_mean", &stats_.running_mean});
    out.buffers.push_back({prefix + ".running_var", &stats_.running_var});
}

template <typename T>
Linear<T>::Linear(int in_features, int out_features, Rng& init, double init_scale)
    : weight_(normal_param<T>({in_features, out_features}, init_scale * std::sqrt(1.0 / in_features), init)),
      bias_(constant_param<T>({out_features}, T(0)))
{
}

template <typename T>
void Linear<T>::collect(ParameterSet<T>& out, const std::string& prefix)
{
    out.parameters.push_back({prefix + ".weight", weight_});
    out.parameters.push_back({prefix + ".bias", bias_});
}

template <typename T>
ConvBnAct<T>::ConvBnAct(int in_channels, int out_channels, int kernel, int stride, T slope, Rng& init)
    // The batch norm shift makes a conv bias redundant.
    : conv_(in_channels, out_channels, kernel, stride, kernel / 2, init, false), bn_(out_channels), slope_(slope)
{
}

template <typename T>
ad::Var<T> ConvBnAct<T>::operator()(const ad::Var<T>& x, bool training)
{
    return ad::leaky_relu(bn_(conv_(x), training), slope_);
}

template <typename T>
void ConvBnAct<T>::collect(ParameterSet<T>& out, const std::string& prefix)
{
    conv_.collect(out, prefix + ".conv");
    bn_.collect(out, prefix + ".bn");
}

template class Conv2d<float>;
template class Conv2d<double>;
template class ConvTranspose2x2<float>;
template class ConvTranspose2x2<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;
template class Linear<float>;
template class Linear<double>;
template class ConvBnAct<float>;
template class ConvBnAct<double>;

}  // namespace cdd::nets
