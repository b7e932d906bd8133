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
#include <sstream>

#include <doctest.h>

#include "cdd/data.hpp"
#include "cdd/metrics.hpp"
#include "oracles.hpp"

namespace metrics = cdd::metrics;
namespace data = cdd::data;
using cdd::Rng;

namespace {

metrics::BinaryMask to_mask(const std::vector<int>& v, int h, int w)
{
    metrics::BinaryMask m(h, w);
    for (std::size_t i = 0; i < v.size(); ++i) m.pixels[i] = static_cast<std::uint8_t>(v[i]);
    return m;
}

// Random blob-ish mask: a union of a few rectangles, sometimes empty.
std::vector<int> random_mask(int h, int w, Rng& rng)
{
    std::vector<int> m(static_cast<std::size_t>(h) * w, 0);
    const int rects = static_cast<int>(rng.below(4));
    for (int r = 0; r < rects; ++r) {
        const int y0 = static_cast<int>(rng.below(h)), x0 = static_cast<int>(rng.below(w));
        const int y1 = y0 + static_cast<int>(rng.below(h - y0)) + 1, x1 = x0 + static_cast<int>(rng.below(w - x0)) + 1;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) m[static_cast<std::size_t>(y) * w + x] = 1;
    }
    if (rng.uniform() < 0.3) {
        for (auto& v : m) v = rng.uniform() < 0.3;
    }
    return m;
}

}  // namespace

TEST_CASE("dice score examples")
{
    metrics::BinaryMask a(4, 4), b(4, 4);
    CHECK(metrics::dice_score(a, b).value == 100.0);
    CHECK(metrics::dice_score(a, b).degenerate);
    for (int i = 0; i < 8; ++i) a.pixels[static_cast<std::size_t>(i)] = 1;
    for (int i = 4; i < 12; ++i) b.pixels[static_cast<std::size_t>(i)] = 1;
    CHECK(metrics::dice_score(a, b).value == 50.0);
    CHECK(metrics::dice_score(a, a).value == 100.0);
    CHECK_THROWS(metrics::dice_score(a, metrics::BinaryMask(4, 5)));
}

TEST_CASE("surface distance examples")
{
    metrics::BinaryMask a(10, 10), b(10, 10);
    a.at(2, 1) = 1;
    b.at(2, 6) = 1;
    CHECK(metrics::average_surface_distance(a, b).value == 5.0);
    CHECK(metrics::average_surface_distance(a, a).value == 0.0);
    const auto empty = metrics::average_surface_distance(a, metrics::BinaryMask(10, 10));
    CHECK(empty.degenerate);
    CHECK(empty.value == doctest::Approx(std::sqrt(200.0)));
}

TEST_CASE("boundary counts the image border as background")
{
    metrics::BinaryMask full(3, 3);
    for (auto& p : full.pixels) p = 1;
    CHECK(metrics::boundary_pixels(full).size() == 8);
}

TEST_CASE("distance transform is exact")
{
    Rng rng(4);
    for (int t = 0; t < 20; ++t) {
        const int h = 1 + static_cast<int>(rng.below(12)), w = 1 + static_cast<int>(rng.below(12));
        metrics::BinaryMask sites(h, w);
        for (auto& p : sites.pixels) p = rng.uniform() < 0.1;
        const auto dt = metrics::squared_distance_transform(sites);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double best = INFINITY;
                for (int yy = 0; yy < h; ++yy)
                    for (int xx = 0; xx < w; ++xx)
                        if (sites.at(yy, xx)) best = std::min(best, double((y - yy) * (y - yy) + (x - xx) * (x - xx)));
                CHECK(dt[static_cast<std::size_t>(y) * w + x] == best);
            }
        }
    }
}

TEST_CASE("metrics agree with brute force on random masks")
{
    Rng rng(6);
    for (int t = 0; t < 60; ++t) {
        const int h = 1 + static_cast<int>(rng.below(20)), w = 1 + static_cast<int>(rng.below(20));
        const auto p = random_mask(h, w, rng), g = random_mask(h, w, rng);
        CHECK(metrics::dice_score(to_mask(p, h, w), to_mask(g, h, w)).value == oracle::dice_percent(p, g));
        const double asd = metrics::average_surface_distance(to_mask(p, h, w), to_mask(g, h, w)).value;
        CHECK(std::fabs(asd - oracle::asd(p, g, h, w)) < 1e-9);
    }
}

TEST_CASE("prediction maps become nested cup and disc masks")
{
    // Three pixels: background, rim, cup; the fourth ties rim and cup.
    const float probs[] = {0.8F, 0.1F, 0.1F, 0.2F, 0.7F, 0.1F, 0.1F, 0.2F, 0.7F, 0.1F, 0.45F, 0.45F};
    const auto m = metrics::masks_from_prediction(probs, 2, 2, 3);
    CHECK(m.disc.pixels == std::vector<std::uint8_t>{0, 1, 1, 1});
    CHECK(m.cup.pixels == std::vector<std::uint8_t>{0, 0, 1, 0});
}

TEST_CASE("evaluating the ground truth gives perfect scores")
{
    data::SplitPlan split;
    split.target_domain = 3;
    split.target_test = data::generate_synthetic_domain({}, 4, 32, 32, 1, 3);
    metrics::Predictor oracle_model = [&](const cdd::Tensor<float>& images) {
        const int n = images.dim(0);
        cdd::Tensor<float> out({n, 32, 32, 3}, 0.0F);
        // Each call sees images in order; recover which by matching pixels.
        for (int i = 0; i < n; ++i) {
            const data::ImageSample* match = nullptr;
            for (const auto& s : split.target_test) {
                if (std::equal(s.image.pixels.begin(), s.image.pixels.end(), images.data() + i * 32 * 32 * 3)) match = &s;
            }
            REQUIRE(match != nullptr);
            for (int q = 0; q < 32 * 32; ++q) out[(static_cast<std::size_t>(i) * 1024 + q) * 3 + match->mask.labels[q]] = 1.0F;
        }
        return out;
    };
    const auto eval = metrics::evaluate_split(oracle_model, split, 3);
    REQUIRE(eval.rows.size() == 2);
    for (const auto& r : eval.rows) {
        CHECK(r.n_images == 4);
        CHECK(r.dice_mean == 100.0);
        CHECK(r.asd_mean == 0.0);
        CHECK(r.dice_std == 0.0);
    }
    CHECK(metrics::aggregate(3, eval.images) == eval.rows);
    split.target_test.clear();
    CHECK_THROWS(metrics::evaluate_split(oracle_model, split));
}

TEST_CASE("population standard deviation")
{
    const auto [m, s] = metrics::mean_std({2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0});
    CHECK(m == 5.0);
    CHECK(s == 2.0);
}

TEST_CASE("report averages per structure and overall")
{
    const double cup[] = {85.75, 81.04, 86.94, 86.86};
    const double disc[] = {96.79, 89.71, 93.25, 94.44};
    std::vector<metrics::EvalRow> rows;
    for (int t = 0; t < 4; ++t) {
        metrics::EvalRow c;
        c.target = std::to_string(t);
        c.structure = "cup";
        c.dice_mean = cup[t];
        metrics::EvalRow d = c;
        d.structure = "disc";
        d.dice_mean = disc[t];
        rows.push_back(c);
        rows.push_back(d);
    }
    const auto report = metrics::build_report(rows);
    CHECK(report.rows.size() == 10);
    CHECK(report.rows[8].target == "Avg");
    CHECK(report.rows[8].dice_mean == doctest::Approx(85.1475));
    CHECK(std::round(report.dice_overall * 100.0) / 100.0 == doctest::Approx(89.35));

    const auto single = metrics::build_report({rows[0], rows[1]});
    CHECK(single.rows[2].dice_mean == rows[0].dice_mean);

    std::ostringstream csv;
    metrics::write_csv(csv, report);
    CHECK(csv.str().find("target") != std::string::npos);
    CHECK(csv.str().find("Avg") != std::string::npos);
}
