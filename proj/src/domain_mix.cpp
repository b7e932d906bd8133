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

#include "cdd/domain_mix.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cdd::domain_mix {

void MixWeights::validate() const
{
    for (double a : alpha) {
        if (!(std::abs(a) <= 1.0)) throw std::invalid_argument("mixing weight outside [-1, 1]: " + std::to_string(a));
    }
}

MixWeights sample_mixing_weights(int k, Rng& rng, bool normalize)
{
    if (k < 1) throw std::invalid_argument("sample_mixing_weights: k must be >= 1");
    MixWeights w;
    w.alpha.resize(static_cast<std::size_t>(k));
    for (double& a : w.alpha) a = rng.uniform(-1.0, 1.0);
    if (normalize) {
        double total = 0.0;
        for (double a : w.alpha) total += std::abs(a);
        if (total > 0.0)
            for (double& a : w.alpha) a /= total;
    }
    return w;
}

template <typename T>
ad::Var<T> mix_style_codes(const std::vector<ad::Var<T>>& codes, const ad::Var<T>& alpha)
{
    if (codes.empty()) throw std::invalid_argument("mix_style_codes: no style codes");
    if (alpha.value().numel() != codes.size()) {
        throw std::invalid_argument("mix_style_codes: " + std::to_string(alpha.value().numel()) + " weights for " +
                                    std::to_string(codes.size()) + " domains");
    }
    for (const auto& c : codes) {
        if (c.shape() != codes.front().shape() || c.shape().size() != 2) {
            throw std::invalid_argument("mix_style_codes: code batches must share one B x Z shape");
        }
    }
    return ad::linear_combination(codes, alpha);
}

template <typename T>
ad::Var<T> mix_style_codes(const std::vector<ad::Var<T>>& codes, const MixWeights& weights)
{
    weights.validate();
    Tensor<T> alpha({static_cast<int>(weights.alpha.size())});
    for (std::size_t i = 0; i < weights.alpha.size(); ++i) alpha[i] = static_cast<T>(weights.alpha[i]);
    return mix_style_codes(codes, ad::Var<T>(std::move(alpha)));
}

template ad::Var<float> mix_style_codes(const std::vector<ad::Var<float>>&, const ad::Var<float>&);
template ad::Var<double> mix_style_codes(const std::vector<ad::Var<double>>&, const ad::Var<double>&);
template ad::Var<float> mix_style_codes(const std::vector<ad::Var<float>>&, const MixWeights&);
template ad::Var<double> mix_style_codes(const std::vector<ad::Var<double>>&, const MixWeights&);

}  // namespace cdd::domain_mix
