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

#ifndef CDD_DATA_HPP
#define CDD_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdd/rng.hpp"
#include "cdd/tensor.hpp"

namespace cdd::data {

inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kDiscRim = 1;
inline constexpr std::uint8_t kCup = 2;
inline constexpr int kNumClasses = 3;

// H x W x C, row-major, values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> pixels;

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    friend bool operator==(const Image&, const Image&) = default;
};

struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> labels;

    std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    friend bool operator==(const Mask&, const Mask&) = default;
};

struct ImageSample {
    Image image;
    Mask mask;
    int domain_id = 0;
    std::string sample_id;

    // Throws DataError when the sample breaks the value or shape invariants.
    void validate() const;
    friend bool operator==(const ImageSample&, const ImageSample&) = default;
};

struct DomainStyleSpec {
    double intensity_bias = 0.0;
    double gamma = 1.0;
    std::vector<double> channel_tint{1.0, 1.0, 1.0};
    double noise_sigma = 0.0;
    double blur_radius = 0.0;  // Gaussian sigma in pixels

    void validate() const;
    friend bool operator==(const DomainStyleSpec&, const DomainStyleSpec&) = default;
};

// Disc and cup placement statistics, shared by every domain.
struct GeometrySpec {
    double disc_radius_min = 0.14;  // fraction of min(H, W)
    double disc_radius_max = 0.22;
    double aspect_min = 0.85;  // vertical / horizontal semi-axis
    double aspect_max = 1.15;
    double cup_ratio_min = 0.4;  // cup semi-axes / disc semi-axes
    double cup_ratio_max = 0.65;

    void validate() const;
};

// Renders fundus-like images with a disc and concentric cup, then applies
// `style`. Geometry and base texture depend only on the seed, never on style.
std::vector<ImageSample> generate_synthetic_domain(const DomainStyleSpec& style, int n, int height, int width,
                                                   std::uint64_t seed, int domain_id = 0,
                                                   const GeometrySpec& geometry = {});

// Applies the style transform to an image in place; noise draws from rng.
void apply_style(Image& image, const DomainStyleSpec& style, Rng& rng);

struct DomainSamples {
    int domain_id = 0;
    std::vector<ImageSample> samples;
};
using Dataset = std::vector<DomainSamples>;

// Records every file the loader opens. Safe to share across threads.
class FileAccessLog {
public:
    void record(const std::filesystem::path& path);
    [[nodiscard]] std::vector<std::filesystem::path> paths() const;
    // True if any recorded path lies inside <root>/domain<id>.
    [[nodiscard]] bool touched_domain(const std::filesystem::path& root, int domain_id) const;

private:
    mutable std::mutex mutex_;
    std::vector<std::filesystem::path> paths_;
};

struct LoadOptions {
    std::optional<std::vector<int>> domains;  // restrict loading to these ids
    FileAccessLog* access_log = nullptr;
};

std::filesystem::path domain_dir(const std::filesystem::path& root, int domain_id);

// Domain ids present under root, from directory names only (no file is opened).
std::vector<int> list_domains(const std::filesystem::path& root);

// Mask files holding {0,1,2} are used as is; {0,128,255} files use the
// 255 = background, 128 = disc, 0 = cup convention and are re-encoded.
Dataset load_multisite_dataset(const std::filesystem::path& root, const LoadOptions& options = {});

void write_multisite_dataset(const std::filesystem::path& root, const Dataset& dataset);

// Maps raw mask values to labels; throws DataError on unknown values.
Mask decode_mask_values(int height, int width, std::span<const std::uint8_t> raw, const std::string& origin);

struct SplitPlan {
    int target_domain = 0;
    std::vector<int> source_domains;
    std::map<int, std::vector<ImageSample>> per_domain_train;
    std::vector<ImageSample> target_test;
};

std::vector<SplitPlan> make_leave_one_out_splits(const Dataset& dataset);

// Plan for training only: `sources` must not contain the target, whose test
// list stays empty so its files need not be read.
SplitPlan make_training_split(const Dataset& sources, int target_domain);

struct AugmentOptions {
    bool flips = true;
    double brightness_jitter = 0.1;  // additive, uniform in [-j, j]
};

ImageSample augment_basic(const ImageSample& sample, int crop_height, int crop_width, Rng& rng,
                          const AugmentOptions& options = {});

// b augmented samples per source domain. Draws without replacement when a
// domain holds at least b samples and with replacement otherwise.
std::map<int, std::vector<ImageSample>> sample_domain_minibatches(const SplitPlan& split, int b, Rng& rng,
                                                                  int crop_height, int crop_width,
                                                                  const AugmentOptions& options = {});

// NHWC image tensor plus flattened labels for a list of equally sized samples.
struct Batch {
    Tensor<float> images;
    std::vector<std::uint8_t> labels;
};
Batch make_batch(std::span<const ImageSample> samples);

}  // namespace cdd::data

#endif  // CDD_DATA_HPP
