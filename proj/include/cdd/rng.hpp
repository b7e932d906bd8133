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

#ifndef CDD_RNG_HPP
#define CDD_RNG_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace cdd {

// Seeded random source. Distributions are derived from the raw 64-bit engine
// output here rather than through <random> distributions, whose algorithms are
// implementation-defined, so streams are reproducible across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform on (0, 1); safe for log().
    double uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }
    double normal();
    double gumbel();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    std::vector<int> permutation(int n);

    // Derives an independent child stream; used to give each component its own source.
    Rng split() { return Rng(engine_()); }

    [[nodiscard]] std::string state() const;
    void restore(const std::string& state);

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace cdd

#endif  // CDD_RNG_HPP
