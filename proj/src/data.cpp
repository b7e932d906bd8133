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

#include "cdd/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <stdexcept>

#include "cdd/errors.hpp"
#include "cdd/image_io.hpp"

namespace cdd::data {

namespace fs = std::filesystem;

namespace {

// Smallest semi-axes that still give a non-empty cup and a rim at least one
// pixel wide, which keeps every cup pixel's 4-neighbours inside the disc.
constexpr double kMinCupSemiAxis = 1.5;
constexpr double kMinRimWidth = 1.25;

struct Ellipse {
    double cx, cy, rx, ry;
    [[nodiscard]] double radius2(double x, double y) const
    {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        return dx * dx + dy * dy;
    }
};

double smoothstep01(double t) { return t <= 0 ? 0 : t >= 1 ? 1 : t * t * (3 - 2 * t); }

void check_containment(const Mask& m, const std::string& id)
{
    bool any_cup = false;
    auto in_disc = [&](int y, int x) {
        if (y < 0 || x < 0 || y >= m.height || x >= m.width) return false;
        return m.at(y, x) != kBackground;
    };
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (m.at(y, x) != kCup) continue;
            any_cup = true;
            if (!in_disc(y - 1, x) || !in_disc(y + 1, x) || !in_disc(y, x - 1) || !in_disc(y, x + 1)) {
                throw DataError("degenerate geometry in " + id + ": cup touches the disc boundary");
            }
        }
    if (!any_cup) throw DataError("degenerate geometry in " + id + ": empty cup");
}

ImageSample render_sample(int height, int width, const GeometrySpec& geo, Rng& rng)
{
    const double size = std::min(height, width);
    const double r = rng.uniform(geo.disc_radius_min, geo.disc_radius_max) * size;
    const double aspect = rng.uniform(geo.aspect_min, geo.aspect_max);
    const double ratio = rng.uniform(geo.cup_ratio_min, geo.cup_ratio_max);
    const double rx = r, ry = r * aspect;
    const double cx = rng.uniform(rx + 1.0, width - rx - 1.0);
    const double cy = rng.uniform(ry + 1.0, height - ry - 1.0);
    const Ellipse disc{cx, cy, rx, ry};
    const Ellipse cup{cx, cy, rx * ratio, ry * ratio};

    // Low-frequency background texture.
    struct Wave {
        double fx, fy, phase;
    };
    Wave waves[3];
    for (auto& w : waves) {
        const double angle = rng.uniform(0.0, 2 * std::numbers::pi);
        const double freq = rng.uniform(0.05, 0.3);
        w = {freq * std::cos(angle), freq * std::sin(angle), rng.uniform(0.0, 2 * std::numbers::pi)};
    }
    const double field_cx = width * rng.uniform(0.4, 0.6), field_cy = height * rng.uniform(0.4, 0.6);
    const double field_r = 0.75 * size;

    ImageSample s;
    s.image = Image{height, width, 3, std::vector<float>(static_cast<std::size_t>(height) * width * 3)};
    s.mask = Mask{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width)};
    static constexpr double kBase[3] = {0.62, 0.30, 0.16};
    static constexpr double kDiscGain[3] = {0.28, 0.26, 0.14};
    static constexpr double kCupGain[3] = {0.10, 0.16, 0.14};

    std::vector<double> shade(static_cast<std::size_t>(height) * width, 1.0);
    // Vessels radiate from the disc and darken the pixels they cross.
    const int vessels = 3 + static_cast<int>(rng.below(3));
    for (int v = 0; v < vessels; ++v) {
        double angle = rng.uniform(0.0, 2 * std::numbers::pi);
        const double bend = rng.uniform(-0.02, 0.02);
        const double half_width = rng.uniform(0.6, 1.1);
        double px = cx + 0.5 * rx * std::cos(angle), py = cy + 0.5 * ry * std::sin(angle);
        for (double t = 0; t < size; t += 0.5) {
            const int x0 = static_cast<int>(std::floor(px - half_width - 1)), x1 = static_cast<int>(px + half_width + 1);
            const int y0 = static_cast<int>(std::floor(py - half_width - 1)), y1 = static_cast<int>(py + half_width + 1);
            for (int y = std::max(0, y0); y <= std::min(height - 1, y1); ++y)
                for (int x = std::max(0, x0); x <= std::min(width - 1, x1); ++x) {
                    const double d = std::hypot(x + 0.5 - px, y + 0.5 - py);
                    if (d < half_width) shade[static_cast<std::size_t>(y) * width + x] = 0.72;
                }
            px += 0.5 * std::cos(angle);
            py += 0.5 * std::sin(angle);
            angle += bend;
        }
    }

    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            double tex = 0.0;
            for (const auto& w : waves) tex += std::sin(w.fx * px + w.fy * py + w.phase);
            tex *= 0.06 / 3.0;
            const double rr = std::hypot(px - field_cx, py - field_cy) / field_r;
            const double vignette = std::max(0.15, 1.0 - 0.6 * rr * rr);
            const double d2 = disc.radius2(px, py), c2 = cup.radius2(px, py);
            // Soft edges in the image; the mask uses the exact ellipses.
            const double disc_w = smoothstep01((1.0 - std::sqrt(d2)) * rx + 0.5);
            const double cup_w = smoothstep01((1.0 - std::sqrt(c2)) * cup.rx + 0.5);
            const double sh = shade[static_cast<std::size_t>(y) * width + x];
            for (int c = 0; c < 3; ++c) {
                double v = kBase[c] * vignette * (1.0 + tex) + kDiscGain[c] * disc_w + kCupGain[c] * cup_w;
                s.image.at(y, x, c) = static_cast<float>(std::clamp(v * sh, 0.0, 1.0));
            }
            s.mask.at(y, x) = c2 <= 1.0 ? kCup : d2 <= 1.0 ? kDiscRim : kBackground;
        }
    }
    return s;
}

std::vector<float> gaussian_kernel(double sigma)
{
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> k(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * i * i / (sigma * sigma));
        k[i + radius] = static_cast<float>(v);
        total += v;
    }
    for (auto& v : k) v = static_cast<float>(v / total);
    return k;
}

void blur(Image& img, double sigma)
{
    const auto k = gaussian_kernel(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    std::vector<float> tmp(img.pixels.size());
    const int h = img.height, w = img.width, ch = img.channels;
    auto idx = [&](int y, int x, int c) { return (static_cast<std::size_t>(y) * w + x) * ch + c; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                float acc = 0.f;
                for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img.pixels[idx(y, std::clamp(x + i, 0, w - 1), c)];
                tmp[idx(y, x, c)] = acc;
            }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                float acc = 0.f;
                for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp[idx(std::clamp(y + i, 0, h - 1), x, c)];
                img.pixels[idx(y, x, c)] = acc;
            }
}

std::string sample_name(int i)
{
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%04d", i);
    return buf;
}

ImageSample load_pair(const fs::path& image_path, const fs::path& mask_path, int domain_id, FileAccessLog* log)
{
    if (log) log->record(image_path);
    const io::Raster img = io::read_png_rgb(image_path);
    if (log) log->record(mask_path);
    const io::Raster raw = io::read_png_labels(mask_path);
    if (raw.height != img.height || raw.width != img.width) {
        throw DataError("mask " + mask_path.string() + " does not match the size of " + image_path.string());
    }
    ImageSample s;
    s.domain_id = domain_id;
    s.sample_id = image_path.stem().string();
    s.image = Image{img.height, img.width, 3, std::vector<float>(img.pixels.size())};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) s.image.pixels[i] = static_cast<float>(img.pixels[i]) / 255.f;
    s.mask = decode_mask_values(raw.height, raw.width, raw.pixels, mask_path.string());
    return s;
}

}  // namespace

void ImageSample::validate() const
{
    if (image.height <= 0 || image.width <= 0 || image.channels <= 0 ||
        image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * image.channels) {
        throw DataError("sample " + sample_id + ": malformed image buffer");
    }
    if (mask.height != image.height || mask.width != image.width ||
        mask.labels.size() != static_cast<std::size_t>(mask.height) * mask.width) {
        throw DataError("sample " + sample_id + ": mask does not match image");
    }
    for (float v : image.pixels)
        if (!(v >= 0.f && v <= 1.f)) throw DataError("sample " + sample_id + ": image value outside [0, 1]");
    for (auto l : mask.labels)
        if (l >= kNumClasses) throw DataError("sample " + sample_id + ": mask label outside {0, 1, 2}");
}

void DomainStyleSpec::validate() const
{
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("style gamma must be > 0");
    if (!std::isfinite(intensity_bias)) throw ConfigError("style bias must be finite");
    if (channel_tint.empty()) throw ConfigError("style tint needs one value per channel");
    for (double t : channel_tint)
        if (!std::isfinite(t) || t < 0.0) throw ConfigError("style tint values must be finite and >= 0");
    if (!(noise_sigma >= 0.0)) throw ConfigError("style noise_sigma must be >= 0");
    if (!(blur_radius >= 0.0)) throw ConfigError("style blur_radius must be >= 0");
}

void GeometrySpec::validate() const
{
    if (!(disc_radius_min > 0 && disc_radius_min <= disc_radius_max && disc_radius_max < 0.5)) {
        throw ConfigError("geometry: need 0 < disc_radius_min <= disc_radius_max < 0.5");
    }
    if (!(aspect_min > 0 && aspect_min <= aspect_max)) throw ConfigError("geometry: bad aspect range");
    if (!(cup_ratio_min > 0 && cup_ratio_min <= cup_ratio_max)) throw ConfigError("geometry: bad cup ratio range");
    if (cup_ratio_max >= 1.0) throw ConfigError("geometry: cup would extend outside the disc");
    if (disc_radius_max * std::max(1.0, aspect_max) >= 0.5) throw ConfigError("geometry: disc does not fit the image");
}

void apply_style(Image& image, const DomainStyleSpec& style, Rng& rng)
{
    style.validate();
    if (static_cast<int>(style.channel_tint.size()) != image.channels) {
        throw ConfigError("style tint has " + std::to_string(style.channel_tint.size()) + " channels, image has " +
                          std::to_string(image.channels));
    }
    const bool identity_gamma = style.gamma == 1.0;
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        const double tint = style.channel_tint[i % image.channels];
        double v = image.pixels[i];
        if (!identity_gamma) v = std::pow(v, style.gamma);
        image.pixels[i] = static_cast<float>(std::clamp(tint * v + style.intensity_bias, 0.0, 1.0));
    }
    if (style.blur_radius > 0.0) blur(image, style.blur_radius);
    if (style.noise_sigma > 0.0) {
        for (auto& v : image.pixels) v = static_cast<float>(v + style.noise_sigma * rng.normal());
    }
    for (auto& v : image.pixels) v = std::clamp(v, 0.f, 1.f);
}

std::vector<ImageSample> generate_synthetic_domain(const DomainStyleSpec& style, int n, int height, int width,
                                                   std::uint64_t seed, int domain_id, const GeometrySpec& geometry)
{
    if (n < 1) throw ConfigError("generate_synthetic_domain: n must be >= 1");
    if (height < 32 || width < 32) throw ConfigError("generate_synthetic_domain: images must be at least 32x32");
    style.validate();
    geometry.validate();
    const double min_axis =
        geometry.disc_radius_min * std::min(height, width) * std::min(1.0, geometry.aspect_min);
    if (geometry.cup_ratio_min * min_axis < kMinCupSemiAxis) {
        throw ConfigError("generate_synthetic_domain: geometry yields an empty cup at this image size");
    }
    if ((1.0 - geometry.cup_ratio_max) * min_axis < kMinRimWidth) {
        throw ConfigError("generate_synthetic_domain: cup would reach the disc boundary at this image size");
    }

    Rng master(seed);
    std::vector<ImageSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng geo_rng = master.split();
        Rng noise_rng = master.split();
        ImageSample s = render_sample(height, width, geometry, geo_rng);
        s.domain_id = domain_id;
        s.sample_id = sample_name(i);
        check_containment(s.mask, s.sample_id);
        apply_style(s.image, style, noise_rng);
        out.push_back(std::move(s));
    }
    return out;
}

void FileAccessLog::record(const fs::path& path)
{
    std::lock_guard lock(mutex_);
    paths_.push_back(path);
}

std::vector<fs::path> FileAccessLog::paths() const
{
    std::lock_guard lock(mutex_);
    return paths_;
}

bool FileAccessLog::touched_domain(const fs::path& root, int domain_id) const
{
    const fs::path dir = fs::weakly_canonical(domain_dir(root, domain_id));
    std::lock_guard lock(mutex_);
    for (const auto& p : paths_) {
        const fs::path c = fs::weakly_canonical(p);
        auto [a, b] = std::mismatch(dir.begin(), dir.end(), c.begin(), c.end());
        if (a == dir.end()) return true;
    }
    return false;
}

fs::path domain_dir(const fs::path& root, int domain_id) { return root / ("domain" + std::to_string(domain_id)); }

std::vector<int> list_domains(const fs::path& root)
{
    if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
    std::vector<int> ids;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_directory()) continue;
        const std::string name = entry.path().filename().string();
        if (name.rfind("domain", 0) != 0 || name.size() == 6) continue;
        int id = -1;
        auto [ptr, ec] = std::from_chars(name.data() + 6, name.data() + name.size(), id);
        if (ec != std::errc() || ptr != name.data() + name.size() || id < 0) continue;
        ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

Mask decode_mask_values(int height, int width, std::span<const std::uint8_t> raw, const std::string& origin)
{
    bool seen[256] = {};
    for (auto v : raw) seen[v] = true;
    bool three_class = true, grey_levels = true;
    for (int v = 0; v < 256; ++v) {
        if (!seen[v]) continue;
        if (v > 2) three_class = false;
        if (v != 0 && v != 128 && v != 255) grey_levels = false;
        if (!three_class && !grey_levels) {
            throw DataError("unknown label value " + std::to_string(v) + " in mask " + origin);
        }
    }
    Mask m{height, width, std::vector<std::uint8_t>(raw.begin(), raw.end())};
    if (!three_class) {
        for (auto& v : m.labels) v = v == 255 ? kBackground : v == 128 ? kDiscRim : kCup;
    }
    return m;
}

Dataset load_multisite_dataset(const fs::path& root, const LoadOptions& options)
{
    std::vector<int> ids = list_domains(root);
    if (options.domains) {
        for (int id : *options.domains) {
            if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
                throw DataError("domain " + std::to_string(id) + " not found under " + root.string());
            }
        }
        ids = *options.domains;
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    }
    if (ids.empty()) throw DataError("no domain<k> directories under " + root.string());

    Dataset dataset;
    for (int id : ids) {
        const fs::path dir = domain_dir(root, id);
        const fs::path images = dir / "images", masks = dir / "masks";
        std::vector<fs::path> files;
        if (fs::is_directory(images)) {
            for (const auto& e : fs::directory_iterator(images))
                if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
        }
        if (files.empty()) throw DataError("domain directory " + dir.string() + " contains no images");
        std::sort(files.begin(), files.end());
        DomainSamples ds{id, {}};
        for (const auto& f : files) {
            const fs::path m = masks / f.filename();
            if (!fs::exists(m)) throw DataError("missing mask for image " + f.string());
            ds.samples.push_back(load_pair(f, m, id, options.access_log));
        }
        dataset.push_back(std::move(ds));
    }
    return dataset;
}

void write_multisite_dataset(const fs::path& root, const Dataset& dataset)
{
    for (const auto& domain : dataset) {
        const fs::path dir = domain_dir(root, domain.domain_id);
        fs::create_directories(dir / "images");
        fs::create_directories(dir / "masks");
        for (const auto& s : domain.samples) {
            s.validate();
            io::Raster img{s.image.height, s.image.width, s.image.channels, {}};
            if (img.channels != 3 && img.channels != 1) throw DataError("cannot store " + s.sample_id + " as PNG");
            img.pixels.resize(s.image.pixels.size());
            for (std::size_t i = 0; i < s.image.pixels.size(); ++i) {
                img.pixels[i] = static_cast<std::uint8_t>(std::lround(s.image.pixels[i] * 255.f));
            }
            io::write_png(dir / "images" / (s.sample_id + ".png"), img);
            io::write_png(dir / "masks" / (s.sample_id + ".png"), io::Raster{s.mask.height, s.mask.width, 1, s.mask.labels});
        }
    }
}

std::vector<SplitPlan> make_leave_one_out_splits(const Dataset& dataset)
{
    if (dataset.size() < 2) throw ConfigError("leave-one-domain-out needs at least 2 domains");
    std::set<int> ids;
    for (const auto& d : dataset) {
        if (!ids.insert(d.domain_id).second) throw ConfigError("duplicate domain id " + std::to_string(d.domain_id));
    }
    std::vector<SplitPlan> plans;
    for (const auto& target : dataset) {
        SplitPlan plan;
        plan.target_domain = target.domain_id;
        plan.target_test = target.samples;
        for (const auto& d : dataset) {
            if (d.domain_id == target.domain_id) continue;
            plan.source_domains.push_back(d.domain_id);
            plan.per_domain_train[d.domain_id] = d.samples;
        }
        plans.push_back(std::move(plan));
    }
    return plans;
}

SplitPlan make_training_split(const Dataset& sources, int target_domain)
{
    SplitPlan plan;
    plan.target_domain = target_domain;
    for (const auto& d : sources) {
        if (d.domain_id == target_domain) throw ConfigError("target domain appears among the training sources");
        if (d.samples.empty()) throw DataError("source domain " + std::to_string(d.domain_id) + " is empty");
        if (!plan.per_domain_train.emplace(d.domain_id, d.samples).second) {
            throw ConfigError("duplicate domain id " + std::to_string(d.domain_id));
        }
        plan.source_domains.push_back(d.domain_id);
    }
    if (plan.source_domains.empty()) throw ConfigError("training needs at least one source domain");
    return plan;
}

ImageSample augment_basic(const ImageSample& sample, int crop_height, int crop_width, Rng& rng,
                          const AugmentOptions& options)
{
    const int h = sample.image.height, w = sample.image.width, ch = sample.image.channels;
    if (crop_height < 1 || crop_width < 1 || crop_height > h || crop_width > w) {
        throw ConfigError("crop " + std::to_string(crop_height) + "x" + std::to_string(crop_width) +
                          " does not fit image " + std::to_string(h) + "x" + std::to_string(w));
    }
    const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - crop_height + 1)));
    const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - crop_width + 1)));
    const bool flip_x = options.flips && rng.uniform() < 0.5;
    const bool flip_y = options.flips && rng.uniform() < 0.5;
    const float shift =
        options.brightness_jitter > 0 ? static_cast<float>(rng.uniform(-options.brightness_jitter, options.brightness_jitter)) : 0.f;

    ImageSample out;
    out.domain_id = sample.domain_id;
    out.sample_id = sample.sample_id;
    out.image = Image{crop_height, crop_width, ch, std::vector<float>(static_cast<std::size_t>(crop_height) * crop_width * ch)};
    out.mask = Mask{crop_height, crop_width, std::vector<std::uint8_t>(static_cast<std::size_t>(crop_height) * crop_width)};
    for (int y = 0; y < crop_height; ++y) {
        const int sy = oy + (flip_y ? crop_height - 1 - y : y);
        for (int x = 0; x < crop_width; ++x) {
            const int sx = ox + (flip_x ? crop_width - 1 - x : x);
            for (int c = 0; c < ch; ++c) out.image.at(y, x, c) = std::clamp(sample.image.at(sy, sx, c) + shift, 0.f, 1.f);
            out.mask.at(y, x) = sample.mask.at(sy, sx);
        }
    }
    return out;
}

std::map<int, std::vector<ImageSample>> sample_domain_minibatches(const SplitPlan& split, int b, Rng& rng,
                                                                  int crop_height, int crop_width,
                                                                  const AugmentOptions& options)
{
    if (b < 1) throw ConfigError("mini-batch size must be >= 1");
    std::map<int, std::vector<ImageSample>> out;
    for (int d : split.source_domains) {
        const auto it = split.per_domain_train.find(d);
        if (it == split.per_domain_train.end() || it->second.empty()) {
            throw DataError("source domain " + std::to_string(d) + " has no training samples");
        }
        const auto& pool = it->second;
        const int n = static_cast<int>(pool.size());
        std::vector<int> picks;
        if (n >= b) {
            picks = rng.permutation(n);
            picks.resize(static_cast<std::size_t>(b));
        } else {
            for (int i = 0; i < b; ++i) picks.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(n))));
        }
        auto& batch = out[d];
        for (int p : picks) batch.push_back(augment_basic(pool[static_cast<std::size_t>(p)], crop_height, crop_width, rng, options));
    }
    return out;
}

Batch make_batch(std::span<const ImageSample> samples)
{
    if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
    const int h = samples[0].image.height, w = samples[0].image.width, c = samples[0].image.channels;
    Batch batch{Tensor<float>::uninitialized({static_cast<int>(samples.size()), h, w, c}), {}};
    batch.labels.reserve(samples.size() * static_cast<std::size_t>(h) * w);
    float* dst = batch.images.data();
    for (const auto& s : samples) {
        if (s.image.height != h || s.image.width != w || s.image.channels != c) {
            throw std::invalid_argument("make_batch: samples differ in size");
        }
        dst = std::copy(s.image.pixels.begin(), s.image.pixels.end(), dst);
        batch.labels.insert(batch.labels.end(), s.mask.labels.begin(), s.mask.labels.end());
    }
    return batch;
}

}  // namespace cdd::data
