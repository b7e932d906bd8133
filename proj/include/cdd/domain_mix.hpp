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

#ifndef CDD_DOMAIN_MIX_HPP
#define CDD_DOMAIN_MIX_HPP

#include <vector>

#include "cdd/losses.hpp"
#include "cdd/nets.hpp"

// Style-mixing domain augmentation: random linear combinations of the source
// domains' style codes are decoded with the original anatomy and re-encoded.
namespace cdd::domain_mix {

struct MixWeights {
    std::vector<double> alpha;  // one weight per domain, each in [-1, 1]

    void validate() const;
};

// Each weight i.i.d. uniform on [-1, 1]. With normalize, weights are divided by
// the sum of their magnitudes, which keeps them inside [-1, 1].
MixWeights sample_mixing_weights(int k, Rng& rng, bool normalize = false);

// out[i] = sum_d alpha[d] * codes[d][i].
template <typename T>
ad::Var<T> mix_style_codes(const std::vector<ad::Var<T>>& codes, const MixWeights& weights);
// Same, differentiable with respect to alpha (shape [k]).
template <typename T>
ad::Var<T> mix_style_codes(const std::vector<ad::Var<T>>& codes, const ad::Var<T>& alpha);

// Decodes the simulated-domain image from the original anatomy and a mixed style.
template <typename T, typename DecoderT>
ad::Var<T> synthesize_mixed_domain(const nets::AnatomyRep<T>& anatomy, const ad::Var<T>& mixed_style,
                                   const DecoderT& decoder)
{
    return decoder.reconstruct(anatomy.value, mixed_style);
}

// Re-encodes x_tilde and returns the L1 anatomy consistency against the
// original representation. detach_original stops gradients into the original.
template <typename T, typename EncoderT>
ad::Var<T> consistency_pass(const ad::Var<T>& x_tilde, const nets::AnatomyRep<T>& anatomy_orig, EncoderT& encoder,
                            Rng& rng, bool training = true, bool detach_original = false)
{
    nets::AnatomyRep<T> reencoded = encoder.encode(x_tilde, rng, training);
    if (detach_original) {
        nets::AnatomyRep<T> frozen = anatomy_orig;
        frozen.value = ad::Var<T>(anatomy_orig.value.value());
        return losses::anatomy_consistency_loss(frozen, reencoded);
    }
    return losses::anatomy_consistency_loss(anatomy_orig, reencoded);
}

}  // namespace cdd::domain_mix

#endif  // CDD_DOMAIN_MIX_HPP
