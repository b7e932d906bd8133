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

#ifndef CDD_LOSSES_HPP
#define CDD_LOSSES_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cdd/nets.hpp"

namespace cdd::losses {

inline constexpr double kDiceSmooth = 1e-5;
inline constexpr double kLogFloor = 1e-12;
inline constexpr double kCosineFloor = 1e-12;

struct LossWeights {
    double lambda1 = 1.0;    // reconstruction
    double lambda2 = 0.001;  // KL
    double lambda3 = 0.01;   // style contrastive
    double lambda4 = 1.0;    // anatomy consistency
    double tau = 0.1;        // contrastive temperature

    void validate() const;
    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossReport {
    double seg = 0.0;
    double rec = 0.0;
    double kl = 0.0;
    double sct = 0.0;
    double dis = 0.0;
    double total = 0.0;

    friend bool operator==(const LossReport&, const LossReport&) = default;
};

// Labels are one byte per pixel, row-major over the leading axes of `probs`
// (B*H*W entries for B x H x W x K probabilities).

// 1 - mean over batch items and classes of (2 sum p*y + eps) / (sum p + sum y + eps).
template <typename T>
ad::Var<T> dice_loss(const ad::Var<T>& probs, std::span<const std::uint8_t> target);

// Mean over pixels of -log(max(p[target], 1e-12)).
template <typename T>
ad::Var<T> cross_entropy_loss(const ad::Var<T>& probs, std::span<const std::uint8_t> target);

// (dice + cross entropy) / 2.
template <typename T>
ad::Var<T> segmentation_loss(const ad::Var<T>& probs, std::span<const std::uint8_t> target);

// Mean absolute difference; both sides may carry gradients.
template <typename T>
ad::Var<T> mean_abs_diff(const ad::Var<T>& a, const ad::Var<T>& b);

template <typename T>
ad::Var<T> reconstruction_loss(const ad::Var<T>& x, const ad::Var<T>& x_hat)
{
    return mean_abs_diff(x, x_hat);
}

// Closed-form KL(N(mean, exp(logvar)) || N(0, I)), summed over Z, averaged over the batch.
template <typename T>
ad::Var<T> kl_loss(const ad::Var<T>& mean, const ad::Var<T>& logvar);

// codes[d] is the b x Z mini-batch of domain d. For anchor i of domain d the
// positive is code permutations[d][i] of the same domain and the negatives are
// code i of every other domain. Averaged over all domains and anchors.
template <typename T>
ad::Var<T> style_contrastive_loss(const std::vector<ad::Var<T>>& codes, double tau,
                                  const std::vector<std::vector<int>>& permutations);

// Draws one uniform permutation per domain from rng.
template <typename T>
ad::Var<T> style_contrastive_loss(const std::vector<ad::Var<T>>& codes, double tau, Rng& rng);

// L1 between the straight-through values of two anatomy representations.
template <typename T>
ad::Var<T> anatomy_consistency_loss(const nets::AnatomyRep<T>& a, const nets::AnatomyRep<T>& b)
{
    return mean_abs_diff(a.value, b.value);
}

// seg + l1*rec + l2*kl + l3*sct + l4*dis. Throws naming the first non-finite part.
double total_loss(const LossReport& parts, const LossWeights& weights);

// Differentiable counterpart; undefined Vars are disabled terms and contribute nothing.
template <typename T>
ad::Var<T> weighted_total(const ad::Var<T>& seg, const ad::Var<T>& rec, const ad::Var<T>& kl, const ad::Var<T>& sct,
                          const ad::Var<T>& dis, const LossWeights& weights);

}  // namespace cdd::losses

#endif  // CDD_LOSSES_HPP
