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
#include <vector>

#include <doctest.h>

#include "cdd/autograd.hpp"
#include "cdd/ops.hpp"
#include "cdd/rng.hpp"
#include "gradcheck.hpp"

using cdd::Rng;
using cdd::Tensor;
using cdd::ad::Var;
namespace ad = cdd::ad;

namespace {

// Weighted sum so every output element gets a distinct upstream gradient.
Var<double> project(const Var<double>& out, std::uint64_t seed)
{
    Rng rng(seed);
    return ad::sum(ad::mul(out, Var<double>(gradcheck::random_tensor(out.shape(), rng))));
}

double check(const std::vector<gradcheck::Leaf>& leaves, const std::function<Var<double>()>& op)
{
    return gradcheck::check(leaves, [&] { return project(op(), 99); }).max_rel_error;
}

}  // namespace

TEST_CASE("elementwise and reduction ops")
{
    Rng rng(1);
    Var<double> a = gradcheck::leaf({2, 3}, rng), b = gradcheck::leaf({2, 3}, rng);
    CHECK(check({{"a", a}, {"b", b}}, [&] { return ad::add(a, b); }) < 1e-6);
    CHECK(check({{"a", a}, {"b", b}}, [&] { return ad::sub(a, b); }) < 1e-6);
    CHECK(check({{"a", a}, {"b", b}}, [&] { return ad::mul(a, b); }) < 1e-6);
    CHECK(check({{"a", a}}, [&] { return ad::scale(a, 2.5); }) < 1e-6);
    CHECK(check({{"a", a}}, [&] { return ad::exp(a); }) < 1e-6);
    CHECK(check({{"a", a}}, [&] { return ad::mean(a); }) < 1e-6);
    CHECK(check({{"a", a}}, [&] { return ad::sigmoid(a); }) < 1e-6);
    CHECK(check({{"a", a}}, [&] { return ad::softmax(a); }) < 1e-6);
    CHECK(check({{"a", a}}, [&] { return ad::leaky_relu(a, 0.2); }) < 1e-6);
}

TEST_CASE("shape ops")
{
    Rng rng(2);
    Var<double> a = gradcheck::leaf({4, 3}, rng), b = gradcheck::leaf({2, 3}, rng);
    CHECK(check({{"a", a}}, [&] { return ad::reshape(a, {2, 6}); }) < 1e-6);
    CHECK(check({{"a", a}}, [&] { return ad::slice_rows(a, 1, 3); }) < 1e-6);
    CHECK(check({{"a", a}, {"b", b}}, [&] { return ad::concat_rows<double>({a, b, a}); }) < 1e-6);
    CHECK(check({{"a", a}}, [&] { return ad::gather_rows(a, {3, 0, 0, 2}); }) < 1e-6);
    CHECK(check({{"b", b}}, [&] { return ad::tile_spatial(b, 2, 3); }) < 1e-6);
    Var<double> x = gradcheck::leaf({1, 2, 2, 3}, rng), y = gradcheck::leaf({1, 2, 2, 2}, rng);
    CHECK(check({{"x", x}, {"y", y}}, [&] { return ad::concat_channels(x, y); }) < 1e-6);
    Var<double> alpha = gradcheck::leaf({3}, rng);
    CHECK(check({{"a", a}, {"alpha", alpha}}, [&] { return ad::linear_combination<double>({a, a, a}, alpha); }) < 1e-6);
}

TEST_CASE("linear, convolution and pooling")
{
    Rng rng(3);
    Var<double> x = gradcheck::leaf({3, 4}, rng), w = gradcheck::leaf({4, 2}, rng), bias = gradcheck::leaf({2}, rng);
    CHECK(check({{"x", x}, {"w", w}, {"b", bias}}, [&] { return ad::linear(x, w, bias); }) < 1e-6);

    Var<double> img = gradcheck::leaf({2, 5, 4, 2}, rng);
    Var<double> k3 = gradcheck::leaf({3, 3, 2, 3}, rng), cb = gradcheck::leaf({3}, rng);
    for (int stride : {1, 2}) {
        CHECK(check({{"x", img}, {"w", k3}, {"b", cb}}, [&] { return ad::conv2d(img, k3, cb, stride, 1); }) < 1e-6);
    }
    Var<double> k1 = gradcheck::leaf({1, 1, 2, 3}, rng);
    CHECK(check({{"x", img}, {"w", k1}}, [&] { return ad::conv2d(img, k1, Var<double>(), 1, 0); }) < 1e-6);

    Var<double> up = gradcheck::leaf({2, 2, 3, 3}, rng), kt = gradcheck::leaf({3, 2, 2, 2}, rng), tb = gradcheck::leaf({2}, rng);
    CHECK(check({{"x", up}, {"w", kt}, {"b", tb}}, [&] { return ad::conv_transpose2x2(up, kt, tb); }) < 1e-6);

    Var<double> pool = gradcheck::leaf({2, 4, 4, 2}, rng);
    CHECK(check({{"x", pool}}, [&] { return ad::max_pool2x2(pool); }) < 1e-6);
    CHECK(check({{"x", pool}}, [&] { return ad::global_avg_pool(pool); }) < 1e-6);
}

TEST_CASE("batch norm gradients and running statistics")
{
    Rng rng(4);
    Var<double> x = gradcheck::leaf({3, 2, 2, 2}, rng), g = gradcheck::leaf({2}, rng, 0.5, 1.5), b = gradcheck::leaf({2}, rng);
    ad::BatchNormStats<double> stats{Tensor<double>({2}, 0.0), Tensor<double>({2}, 1.0)};
    CHECK(check({{"x", x}, {"gamma", g}, {"beta", b}}, [&] { return ad::batch_norm(x, g, b, stats, true); }) < 1e-5);

    ad::BatchNormStats<double> fresh{Tensor<double>({2}, 0.0), Tensor<double>({2}, 1.0)};
    double mean0 = 0.0;
    for (std::size_t i = 0; i < x.value().numel(); i += 2) mean0 += x.value()[i];
    mean0 /= 12.0;
    {
        ad::FreezeRunningStatsGuard freeze;
        (void)ad::batch_norm(x, g, b, fresh, true);
        CHECK(fresh.running_mean[0] == 0.0);
    }
    (void)ad::batch_norm(x, g, b, fresh, true);
    CHECK(fresh.running_mean[0] == doctest::Approx(0.1 * mean0));

    // Eval mode normalizes with the running estimates.
    ad::BatchNormStats<double> fixed{Tensor<double>({2}, 1.0), Tensor<double>({2}, 4.0)};
    const Var<double> one(Tensor<double>({2}, 1.0)), zero(Tensor<double>({2}, 0.0));
    const Var<double> out = ad::batch_norm(x, one, zero, fixed, false);
    CHECK(out.value()[0] == doctest::Approx((x.value()[0] - 1.0) / std::sqrt(4.0 + 1e-5)));
}

TEST_CASE("gradients accumulate across uses and respect detach and no-grad")
{
    Var<double> a(Tensor<double>({2}, 3.0), true);
    ad::sum(ad::add(ad::mul(a, a), a)).backward();
    CHECK(a.grad()[0] == doctest::Approx(7.0));

    Var<double> c(Tensor<double>({2}, 1.0), true);
    ad::sum(ad::mul(ad::detach(c), c)).backward();
    CHECK(c.grad()[1] == doctest::Approx(1.0));

    Var<double> d(Tensor<double>({2}, 1.0), true);
    {
        ad::NoGradGuard guard;
        CHECK_FALSE(ad::exp(d).requires_grad());
    }
    CHECK(ad::exp(d).requires_grad());
}

TEST_CASE("straight-through passes the gradient to the soft input")
{
    Rng rng(8);
    Var<double> soft = gradcheck::leaf({2, 3}, rng);
    Tensor<double> hard({2, 3}, 0.0);
    hard[1] = hard[5] = 1.0;
    const Var<double> st = ad::straight_through(hard, soft);
    CHECK(st.value() == hard);
    Tensor<double> w({2, 3});
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<double>(i);
    ad::sum(ad::mul(st, Var<double>(w))).backward();
    CHECK(soft.grad() == w);
}
