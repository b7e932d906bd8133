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

#include <filesystem>
#include <fstream>
#include <set>

#include <doctest.h>

#include "cdd/data.hpp"
#include "cdd/errors.hpp"
#include "cdd/image_io.hpp"
#include "temp_dir.hpp"

namespace data = cdd::data;
namespace fs = std::filesystem;
using cdd::Rng;

namespace {

bool cup_inside_disc(const data::Mask& m)
{
    bool any_cup = false;
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            if (m.at(y, x) != data::kCup) continue;
            any_cup = true;
            const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
            for (int k = 0; k < 4; ++k) {
                const int yy = y + dy[k], xx = x + dx[k];
                if (yy < 0 || xx < 0 || yy >= m.height || xx >= m.width || m.at(yy, xx) == data::kBackground) return false;
            }
        }
    }
    return any_cup;
}

}  // namespace

TEST_CASE("synthetic samples are valid and contain the cup in the disc")
{
    const auto samples = data::generate_synthetic_domain({}, 30, 64, 64, 9, 2);
    CHECK(samples.size() == 30);
    std::set<std::string> ids;
    for (const auto& s : samples) {
        CHECK_NOTHROW(s.validate());
        CHECK(s.domain_id == 2);
        CHECK(cup_inside_disc(s.mask));
        ids.insert(s.sample_id);
    }
    CHECK(ids.size() == 30);
}

TEST_CASE("generation is seeded and style only changes intensities")
{
    const data::DomainStyleSpec plain;
    data::DomainStyleSpec dark;
    dark.intensity_bias = -0.1;
    dark.gamma = 1.5;
    dark.noise_sigma = 0.02;
    const auto a = data::generate_synthetic_domain(plain, 4, 48, 48, 3);
    const auto b = data::generate_synthetic_domain(plain, 4, 48, 48, 3);
    const auto c = data::generate_synthetic_domain(dark, 4, 48, 48, 3);
    CHECK(a == b);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].mask == c[i].mask);
        CHECK_FALSE(a[i].image == c[i].image);
    }
}

TEST_CASE("generator rejects sizes and styles it cannot render")
{
    CHECK_THROWS_AS(data::generate_synthetic_domain({}, 1, 16, 64, 0), cdd::ConfigError);
    data::DomainStyleSpec bad;
    bad.gamma = 0.0;
    CHECK_THROWS_AS(data::generate_synthetic_domain(bad, 1, 64, 64, 0), cdd::ConfigError);
    data::GeometrySpec geo;
    geo.cup_ratio_max = 1.2;
    CHECK_THROWS_AS(data::generate_synthetic_domain({}, 1, 64, 64, 0, 0, geo), cdd::ConfigError);
}

TEST_CASE("apply_style with the identity style leaves the image unchanged")
{
    auto s = data::generate_synthetic_domain({}, 1, 32, 32, 1)[0];
    const data::Image before = s.image;
    Rng rng(0);
    data::apply_style(s.image, {}, rng);
    for (std::size_t i = 0; i < before.pixels.size(); ++i) CHECK(s.image.pixels[i] == doctest::Approx(before.pixels[i]));
}

TEST_CASE("mask values are decoded in either convention")
{
    const std::vector<std::uint8_t> raw{0, 1, 2, 2};
    CHECK(data::decode_mask_values(2, 2, raw, "t").labels == raw);
    const std::vector<std::uint8_t> gray{255, 128, 0, 255};
    CHECK(data::decode_mask_values(2, 2, gray, "t").labels == std::vector<std::uint8_t>{0, 1, 2, 0});
    const std::vector<std::uint8_t> bad{0, 7, 0, 0};
    CHECK_THROWS_AS(data::decode_mask_values(2, 2, bad, "t"), cdd::DataError);
}

TEST_CASE("datasets round-trip through the directory layout")
{
    TempDir dir;
    data::Dataset ds{{0, data::generate_synthetic_domain({}, 3, 32, 32, 1, 0)},
                     {1, data::generate_synthetic_domain({}, 2, 32, 32, 2, 1)}};
    data::write_multisite_dataset(dir.path(), ds);
    CHECK(data::list_domains(dir.path()) == std::vector<int>{0, 1});

    data::FileAccessLog log;
    const auto loaded = data::load_multisite_dataset(dir.path(), {std::vector<int>{1}, &log});
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].samples.size() == 2);
    CHECK(loaded[0].samples[0].mask == ds[1].samples[0].mask);
    // PNG stores 8-bit intensities.
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(std::fabs(loaded[0].samples[0].image.pixels[i] - ds[1].samples[0].image.pixels[i]) <= 0.5F / 255.0F + 1e-6F);
    }
    CHECK(log.touched_domain(dir.path(), 1));
    CHECK_FALSE(log.touched_domain(dir.path(), 0));
}

TEST_CASE("loader reports missing masks and empty domains")
{
    TempDir dir;
    data::Dataset ds{{0, data::generate_synthetic_domain({}, 2, 32, 32, 1, 0)}};
    data::write_multisite_dataset(dir.path(), ds);
    fs::remove(data::domain_dir(dir.path(), 0) / "masks" / (ds[0].samples[0].sample_id + ".png"));
    CHECK_THROWS_WITH_AS(data::load_multisite_dataset(dir.path()), doctest::Contains("missing mask"), cdd::DataError);

    fs::create_directories(data::domain_dir(dir.path(), 3) / "images");
    CHECK_THROWS_AS(data::load_multisite_dataset(dir.path(), {std::vector<int>{3}, nullptr}), cdd::DataError);
    CHECK_THROWS_AS(data::load_multisite_dataset(dir.path() / "nope"), cdd::DataError);
}

TEST_CASE("leave-one-out splits hold out each domain exactly once")
{
    data::Dataset ds;
    for (int d = 0; d < 4; ++d) ds.push_back({d, data::generate_synthetic_domain({}, 2, 32, 32, d, d)});
    const auto splits = data::make_leave_one_out_splits(ds);
    REQUIRE(splits.size() == 4);
    for (const auto& s : splits) {
        CHECK(s.source_domains.size() == 3);
        CHECK(s.per_domain_train.count(s.target_domain) == 0);
        for (const auto& t : s.target_test) CHECK(t.domain_id == s.target_domain);
    }
    CHECK_THROWS_AS(data::make_leave_one_out_splits({ds[0]}), cdd::ConfigError);
    CHECK_THROWS_AS(data::make_leave_one_out_splits({ds[0], ds[0]}), cdd::ConfigError);
    CHECK_THROWS_AS(data::make_training_split({ds[0], ds[1]}, 1), cdd::ConfigError);
}

TEST_CASE("mini-batches draw b cropped samples from every source domain")
{
    data::Dataset ds{{0, data::generate_synthetic_domain({}, 5, 48, 48, 1, 0)},
                     {2, data::generate_synthetic_domain({}, 3, 48, 48, 2, 2)}};
    const auto split = data::make_training_split(ds, 1);
    Rng rng(0);
    const auto batches = data::sample_domain_minibatches(split, 4, rng, 32, 32);
    REQUIRE(batches.size() == 2);
    for (const auto& [d, batch] : batches) {
        CHECK(batch.size() == 4);
        for (const auto& s : batch) {
            CHECK(s.domain_id == d);
            CHECK(s.image.height == 32);
            CHECK(s.mask.width == 32);
            CHECK_NOTHROW(s.validate());
        }
    }
    const auto b = data::make_batch(batches.at(0));
    CHECK(b.images.shape() == cdd::Shape{4, 32, 32, 3});
    CHECK(b.labels.size() == 4 * 32 * 32);
    CHECK_THROWS(data::sample_domain_minibatches(split, 2, rng, 64, 64));
}

TEST_CASE("augmentation keeps image and mask aligned")
{
    // Image intensity encodes the label, so misalignment would show.
    data::ImageSample s;
    s.image = {40, 40, 1, std::vector<float>(1600)};
    s.mask = {40, 40, std::vector<std::uint8_t>(1600)};
    Rng rng(3);
    for (std::size_t i = 0; i < 1600; ++i) {
        s.mask.labels[i] = static_cast<std::uint8_t>(rng.below(3));
        s.image.pixels[i] = 0.25F + 0.25F * s.mask.labels[i];
    }
    data::AugmentOptions opts;
    opts.brightness_jitter = 0.0;
    for (int t = 0; t < 20; ++t) {
        const auto a = data::augment_basic(s, 24, 16, rng, opts);
        for (std::size_t i = 0; i < a.mask.labels.size(); ++i) {
            CHECK(a.image.pixels[i] == 0.25F + 0.25F * a.mask.labels[i]);
        }
    }
}
