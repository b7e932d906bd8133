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

#include <cmath>

#include <doctest.h>

#include "cdd/domain_mix.hpp"
#include "cdd/nets.hpp"
#include "gradcheck.hpp"

using cdd::Rng;
using cdd::Tensor;
using cdd::ad::Var;
namespace dm = cdd::domain_mix;

TEST_CASE("mixing weights lie in [-1, 1]")
{
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const auto w = dm::sample_mixing_weights(3, rng);
        for (double a : w.alpha) CHECK(std::fabs(a) <= 1.0);
        const auto n = dm::sample_mixing_weights(3, rng, true);
        double s = 0.0;
        for (double a : n.alpha) s += std::fabs(a);
        CHECK(s == doctest::Approx(1.0));
    }
    CHECK_THROWS(dm::sample_mixing_weights(0, rng));
    CHECK_THROWS(dm::MixWeights{{0.5, 1.5}}.validate());
}

TEST_CASE("one-hot weights recover a source style code exactly")
{
    Rng rng(2);
    std::vector<Var<float>> codes;
    for (int d = 0; d < 3; ++d) codes.emplace_back(gradcheck::random_tensor({4, 5}, rng).cast<float>());
    for (int d = 0; d < 3; ++d) {
        dm::MixWeights w{{0.0, 0.0, 0.0}};
        w.alpha[static_cast<std::size_t>(d)] = 1.0;
        CHECK(dm::mix_style_codes(codes, w).value() == codes[static_cast<std::size_t>(d)].value());
    }
}

TEST_CASE("mixing is linear in the codes")
{
    Rng rng(3);
    std::vector<Var<double>> codes{Var<double>(gradcheck::random_tensor({2, 3}, rng)),
                                   Var<double>(gradcheck::random_tensor({2, 3}, rng))};
    const dm::MixWeights w{{0.25, -0.5}};
    const auto mixed = dm::mix_style_codes(codes, w).value();
    for (std::size_t i = 0; i < mixed.numel(); ++i) {
        CHECK(mixed[i] == doctest::Approx(0.25 * codes[0].value()[i] - 0.5 * codes[1].value()[i]));
    }
    CHECK_THROWS(dm::mix_style_codes(codes, dm::MixWeights{{1.0}}));
    codes.emplace_back(Tensor<double>({3, 3}));
    CHECK_THROWS(dm::mix_style_codes(codes, dm::MixWeights{{1.0, 0.0, 0.0}}));
}

TEST_CASE("consistency pass is zero when the synthesized image is the original")
{
    cdd::nets::NetConfig c;
    c.anatomy_channels = 3;
    c.style_dim = 2;
    c.unet_channels = {2, 3};
    c.style_channels = {2, 2, 2, 2};
    c.decoder_channels = 2;
    c.segmenter_channels = 2;
    cdd::nets::CddModel<double> model(c, 1);
    Rng rng(4);
    const Var<double> x(gradcheck::random_tensor({2, 4, 4, 3}, rng, 0.0, 1.0));
    const auto rep = model.anatomy().encode(x, rng, false);
    CHECK(dm::consistency_pass(x, rep, model.anatomy(), rng, false).item() == 0.0);
}
