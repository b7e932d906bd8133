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

#ifndef CDD_METRICS_HPP
#define CDD_METRICS_HPP

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "cdd/data.hpp"
#include "cdd/tensor.hpp"

namespace cdd::metrics {

struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // 0 or 1

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, 0) {}
    std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    [[nodiscard]] std::size_t area() const;
    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

struct StructureMasks {
    BinaryMask cup;
    BinaryMask disc;
};

// Per-pixel argmax over the class axis of an H x W x K map (ties go to the
// lower class), then cup = {2}, disc = {1, 2}.
StructureMasks masks_from_prediction(const float* probs, int height, int width, int classes = 3);
StructureMasks masks_from_labels(const data::Mask& mask);

struct Score {
    double value = 0.0;
    bool degenerate = false;
};

// 100 * 2|P n G| / (|P| + |G|); 100 and flagged when both are empty.
Score dice_score(const BinaryMask& pred, const BinaryMask& gt);

// Mask pixels with at least one 4-neighbour outside the mask or the image.
std::vector<std::pair<int, int>> boundary_pixels(const BinaryMask& mask);

// Symmetric mean Euclidean distance between the two boundaries. When either
// mask is empty the result is the image diagonal, flagged.
Score average_surface_distance(const BinaryMask& pred, const BinaryMask& gt);

// Exact squared Euclidean distance from every pixel to the nearest set pixel
// of `sites`; infinity when there are none.
std::vector<double> squared_distance_transform(const BinaryMask& sites);

struct ImageScores {
    std::string sample_id;
    Score dice_cup, dice_disc, asd_cup, asd_disc;
};

struct EvalRow {
    std::string target;     // domain id, or "Avg"
    std::string structure;  // "cup" or "disc"
    double dice_mean = 0, dice_std = 0;
    double asd_mean = 0, asd_std = 0;
    int n_images = 0;
    int degenerate_count = 0;
    friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

struct SplitEvaluation {
    int target_domain = 0;
    std::vector<ImageScores> images;
    std::vector<EvalRow> rows;  // cup then disc
};

// Maps an N x H x W x C image batch to N x H x W x K class probabilities.
using Predictor = std::function<Tensor<float>(const Tensor<float>&)>;

// Mean and population standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& values);

std::vector<EvalRow> aggregate(int target_domain, const std::vector<ImageScores>& images);

SplitEvaluation evaluate_split(const Predictor& predict, const data::SplitPlan& split, int batch_size = 8);

struct EvalReport {
    std::vector<EvalRow> rows;  // per target, then one Avg row per structure
    double dice_overall = 0.0;  // unweighted mean of every per-target Dice cell
    double asd_overall = 0.0;
};

EvalReport build_report(const std::vector<EvalRow>& per_target_rows);

void write_csv(std::ostream& os, const EvalReport& report);
void write_table(std::ostream& os, const EvalReport& report, const std::string& title = "");

}  // namespace cdd::metrics

#endif  // CDD_METRICS_HPP
