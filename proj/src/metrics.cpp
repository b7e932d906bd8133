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

#include "cdd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace cdd::metrics {

namespace {

void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* op)
{
    if (a.height != b.height || a.width != b.width) {
        throw std::invalid_argument(std::string(op) + ": mask shapes differ (" + std::to_string(a.height) + "x" +
                                    std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                    std::to_string(b.width) + ")");
    }
}

// One-dimensional lower envelope of parabolas (Felzenszwalb & Huttenlocher).
void distance_1d(const double* f, int n, double* d, std::vector<int>& v, std::vector<double>& z)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf) continue;
        if (k < 0) {
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
            k = 0;
            continue;
        }
        double s = 0.0;
        while (true) {
            const int p = v[k];
            s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
            if (s > z[k]) break;
            --k;  // z[0] is -inf, so k stays >= 0
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    if (k < 0) {
        std::fill(d, d + n, inf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        const double dq = q - v[j];
        d[q] = dq * dq + f[v[j]];
    }
}

double mean_distance(const std::vector<std::pair<int, int>>& from, const std::vector<double>& sq_dist, int width)
{
    double total = 0.0;
    for (auto [y, x] : from) total += std::sqrt(sq_dist[static_cast<std::size_t>(y) * width + x]);
    return total / static_cast<double>(from.size());
}

}  // namespace

std::size_t BinaryMask::area() const { return static_cast<std::size_t>(std::count(pixels.begin(), pixels.end(), 1)); }

StructureMasks masks_from_prediction(const float* probs, int height, int width, int classes)
{
    if (classes < 3) throw std::invalid_argument("masks_from_prediction: need at least 3 classes");
    StructureMasks out{BinaryMask(height, width), BinaryMask(height, width)};
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const float* p = probs + (static_cast<std::size_t>(y) * width + x) * classes;
            int best = 0;
            for (int c = 1; c < classes; ++c)
                if (p[c] > p[best]) best = c;
            out.cup.at(y, x) = best == data::kCup;
            out.disc.at(y, x) = best == data::kCup || best == data::kDiscRim;
        }
    return out;
}

StructureMasks masks_from_labels(const data::Mask& mask)
{
    StructureMasks out{BinaryMask(mask.height, mask.width), BinaryMask(mask.height, mask.width)};
    for (std::size_t i = 0; i < mask.labels.size(); ++i) {
        out.cup.pixels[i] = mask.labels[i] == data::kCup;
        out.disc.pixels[i] = mask.labels[i] == data::kCup || mask.labels[i] == data::kDiscRim;
    }
    return out;
}

Score dice_score(const BinaryMask& pred, const BinaryMask& gt)
{
    require_same_shape(pred, gt, "dice_score");
    std::size_t inter = 0, sp = 0, sg = 0;
    for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
        const bool p = pred.pixels[i] != 0, g = gt.pixels[i] != 0;
        inter += p && g;
        sp += p;
        sg += g;
    }
    if (sp + sg == 0) return {100.0, true};
    return {100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(sp + sg), false};
}

std::vector<std::pair<int, int>> boundary_pixels(const BinaryMask& mask)
{
    std::vector<std::pair<int, int>> out;
    auto bg = [&](int y, int x) { return y < 0 || x < 0 || y >= mask.height || x >= mask.width || !mask.at(y, x); };
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(y, x)) continue;
            if (bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1)) out.emplace_back(y, x);
        }
    return out;
}

std::vector<double> squared_distance_transform(const BinaryMask& sites)
{
    const int h = sites.height, w = sites.width;
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> grid(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = sites.pixels[i] ? 0.0 : inf;
    const int n = std::max(h, w);
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) f[y] = grid[static_cast<std::size_t>(y) * w + x];
        distance_1d(f.data(), h, d.data(), v, z);
        for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = d[y];
    }
    for (int y = 0; y < h; ++y) {
        double* row = grid.data() + static_cast<std::size_t>(y) * w;
        std::copy(row, row + w, f.begin());
        distance_1d(f.data(), w, d.data(), v, z);
        std::copy(d.begin(), d.begin() + w, row);
    }
    return grid;
}

Score average_surface_distance(const BinaryMask& pred, const BinaryMask& gt)
{
    require_same_shape(pred, gt, "average_surface_distance");
    const auto bp = boundary_pixels(pred);
    const auto bg = boundary_pixels(gt);
    if (bp.empty() || bg.empty()) {
        return {std::hypot(static_cast<double>(pred.height), static_cast<double>(pred.width)), true};
    }
    BinaryMask sp(pred.height, pred.width), sg(gt.height, gt.width);
    for (auto [y, x] : bp) sp.at(y, x) = 1;
    for (auto [y, x] : bg) sg.at(y, x) = 1;
    const double pg = mean_distance(bp, squared_distance_transform(sg), pred.width);
    const double gp = mean_distance(bg, squared_distance_transform(sp), pred.width);
    return {0.5 * (pg + gp), false};
}

std::pair<double, double> mean_std(const std::vector<double>& values)
{
    if (values.empty()) return {0.0, 0.0};
    double m = 0.0;
    for (double v : values) m += v;
    m /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - m) * (v - m);
    return {m, std::sqrt(var / static_cast<double>(values.size()))};
}

std::vector<EvalRow> aggregate(int target_domain, const std::vector<ImageScores>& images)
{
    if (images.empty()) throw std::invalid_argument("aggregate: no images");
    std::vector<EvalRow> rows;
    for (const bool cup : {true, false}) {
        std::vector<double> dice, asd;
        int degenerate = 0;
        for (const auto& s : images) {
            const Score& d = cup ? s.dice_cup : s.dice_disc;
            const Score& a = cup ? s.asd_cup : s.asd_disc;
            dice.push_back(d.value);
            asd.push_back(a.value);
            degenerate += d.degenerate || a.degenerate;
        }
        EvalRow row;
        row.target = std::to_string(target_domain);
        row.structure = cup ? "cup" : "disc";
        std::tie(row.dice_mean, row.dice_std) = mean_std(dice);
        std::tie(row.asd_mean, row.asd_std) = mean_std(asd);
        row.n_images = static_cast<int>(images.size());
        row.degenerate_count = degenerate;
        rows.push_back(row);
    }
    return rows;
}

SplitEvaluation evaluate_split(const Predictor& predict, const data::SplitPlan& split, int batch_size)
{
    if (split.target_test.empty()) {
        throw std::invalid_argument("evaluate_split: target domain " + std::to_string(split.target_domain) +
                                    " has no test images");
    }
    if (batch_size < 1) batch_size = 1;
    SplitEvaluation result;
    result.target_domain = split.target_domain;
    const auto& test = split.target_test;
    std::size_t i = 0;
    while (i < test.size()) {
        // Group consecutive images of equal size into one forward pass.
        std::size_t j = i + 1;
        while (j < test.size() && j - i < static_cast<std::size_t>(batch_size) &&
               test[j].image.height == test[i].image.height && test[j].image.width == test[i].image.width) {
            ++j;
        }
        const data::Batch batch = data::make_batch(std::span(test).subspan(i, j - i));
        const Tensor<float> probs = predict(batch.images);
        const int h = test[i].image.height, w = test[i].image.width;
        if (probs.rank() != 4 || probs.dim(0) != static_cast<int>(j - i) || probs.dim(1) != h || probs.dim(2) != w) {
            throw std::runtime_error("evaluate_split: predictor returned shape " + shape_str(probs.shape()));
        }
        const int k = probs.dim(3);
        for (std::size_t n = i; n < j; ++n) {
            const float* p = probs.data() + (n - i) * static_cast<std::size_t>(h) * w * k;
            const auto pred = masks_from_prediction(p, h, w, k);
            const auto gt = masks_from_labels(test[n].mask);
            ImageScores s;
            s.sample_id = test[n].sample_id;
            s.dice_cup = dice_score(pred.cup, gt.cup);
            s.dice_disc = dice_score(pred.disc, gt.disc);
            s.asd_cup = average_surface_distance(pred.cup, gt.cup);
            s.asd_disc = average_surface_distance(pred.disc, gt.disc);
            result.images.push_back(std::move(s));
        }
        i = j;
    }
    result.rows = aggregate(split.target_domain, result.images);
    return result;
}

EvalReport build_report(const std::vector<EvalRow>& per_target_rows)
{
    if (per_target_rows.empty()) throw std::invalid_argument("build_report: no rows");
    EvalReport report;
    report.rows = per_target_rows;
    double dice_total = 0.0, asd_total = 0.0;
    for (const char* structure : {"cup", "disc"}) {
        std::vector<double> dice, asd;
        EvalRow avg;
        avg.target = "Avg";
        avg.structure = structure;
        for (const auto& r : per_target_rows) {
            if (r.structure != structure) continue;
            dice.push_back(r.dice_mean);
            asd.push_back(r.asd_mean);
            avg.n_images += r.n_images;
            avg.degenerate_count += r.degenerate_count;
        }
        if (dice.empty()) continue;
        std::tie(avg.dice_mean, avg.dice_std) = mean_std(dice);
        std::tie(avg.asd_mean, avg.asd_std) = mean_std(asd);
        report.rows.push_back(avg);
    }
    for (const auto& r : per_target_rows) {
        dice_total += r.dice_mean;
        asd_total += r.asd_mean;
    }
    report.dice_overall = dice_total / static_cast<double>(per_target_rows.size());
    report.asd_overall = asd_total / static_cast<double>(per_target_rows.size());
    return report;
}

void write_csv(std::ostream& os, const EvalReport& report)
{
    os << "target_domain,structure,dice_mean,dice_std,asd_mean,asd_std,n_images,degenerate_count\n";
    os << std::setprecision(10);
    for (const auto& r : report.rows) {
        os << r.target << ',' << r.structure << ',' << r.dice_mean << ',' << r.dice_std << ',' << r.asd_mean << ','
           << r.asd_std << ',' << r.n_images << ',' << r.degenerate_count << '\n';
    }
}

void write_table(std::ostream& os, const EvalReport& report, const std::string& title)
{
    if (!title.empty()) os << title << '\n';
    std::vector<std::string> targets;
    std::map<std::pair<std::string, std::string>, const EvalRow*> cells;
    for (const auto& r : report.rows) {
        if (std::find(targets.begin(), targets.end(), r.target) == targets.end()) targets.push_back(r.target);
        cells[{r.target, r.structure}] = &r;
    }
    auto cell = [&](const std::string& t, const char* s, bool dice) {
        std::ostringstream c;
        const auto it = cells.find({t, s});
        if (it == cells.end()) return std::string("-");
        c << std::fixed << std::setprecision(2) << (dice ? it->second->dice_mean : it->second->asd_mean) << " +- "
          << (dice ? it->second->dice_std : it->second->asd_std);
        return c.str();
    };
    for (const bool dice : {true, false}) {
        os << (dice ? "Dice (%)" : "ASD (pixel)") << '\n';
        os << std::left << std::setw(8) << "target" << std::setw(20) << "cup" << std::setw(20) << "disc" << '\n';
        for (const auto& t : targets) {
            os << std::left << std::setw(8) << t << std::setw(20) << cell(t, "cup", dice) << std::setw(20)
               << cell(t, "disc", dice) << '\n';
        }
        os << "overall " << std::fixed << std::setprecision(2) << (dice ? report.dice_overall : report.asd_overall)
           << "\n\n";
        os.unsetf(std::ios::fixed);
    }
}

}  // namespace cdd::metrics
