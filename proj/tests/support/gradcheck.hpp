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

#ifndef CDD_TESTS_GRADCHECK_HPP
#define CDD_TESTS_GRADCHECK_HPP

// Central finite-difference gradient checks in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cdd/autograd.hpp"
#include "cdd/rng.hpp"

namespace gradcheck {

using cdd::ad::Var;

struct Leaf {
    std::string name;
    Var<double> var;
};

struct Result {
    double max_rel_error = 0.0;
    std::string worst;
    int entries = 0;
};

inline double norm(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Compares backward() of the scalar built by f against central differences on
// up to max_entries randomly chosen entries of every leaf. The error of a leaf
// is |a - n| / max(|a|, |n|, floor) over the chosen entries.
inline Result check(const std::vector<Leaf>& leaves, const std::function<Var<double>()>& f, int max_entries = 16,
                    std::uint64_t seed = 0, double h = 1e-5, double floor = 1e-6)
{
    for (const auto& l : leaves) l.var.node()->grad = cdd::Tensor<double>();
    f().backward();
    std::vector<cdd::Tensor<double>> analytic;
    for (const auto& l : leaves) analytic.push_back(l.var.grad());

    cdd::Rng pick(seed);
    Result result;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        cdd::Tensor<double>& value = leaves[li].var.node()->value;
        std::vector<std::size_t> index;
        if (static_cast<int>(value.numel()) <= max_entries) {
            for (std::size_t i = 0; i < value.numel(); ++i) index.push_back(i);
        } else {
            for (int i = 0; i < max_entries; ++i) index.push_back(pick.below(value.numel()));
        }
        std::vector<double> a, n, diff;
        for (std::size_t i : index) {
            const double saved = value[i];
            double plus = 0.0, minus = 0.0;
            {
                cdd::ad::NoGradGuard no_grad;
                value[i] = saved + h;
                plus = f().item();
                value[i] = saved - h;
                minus = f().item();
            }
            value[i] = saved;
            a.push_back(analytic[li][i]);
            n.push_back((plus - minus) / (2.0 * h));
            diff.push_back(a.back() - n.back());
        }
        const double rel = norm(diff) / std::max({norm(a), norm(n), floor});
        result.entries += static_cast<int>(index.size());
        if (rel >= result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst = leaves[li].name;
        }
    }
    return result;
}

inline cdd::Tensor<double> random_tensor(cdd::Shape shape, cdd::Rng& rng, double lo = -1.0, double hi = 1.0)
{
    cdd::Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

inline Var<double> leaf(cdd::Shape shape, cdd::Rng& rng, double lo = -1.0, double hi = 1.0)
{
    return Var<double>(random_tensor(std::move(shape), rng, lo, hi), true);
}

}  // namespace gradcheck

#endif  // CDD_TESTS_GRADCHECK_HPP
