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

#include "cdd/nets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cdd::nets {

namespace {
constexpr double kStyleSlope = 0.2;
constexpr double kSegmenterSlope = 0.2;
constexpr double kDecoderSlope = 0.2;
}  // namespace

void NetConfig::validate() const
{
    auto fail = [](const std::string& msg) { throw std::invalid_argument("NetConfig: " + msg); };
    if (anatomy_channels < 2) fail("anatomy_channels (T) must be >= 2");
    if (style_dim < 1) fail("style_dim (Z) must be >= 1");
    if (unet_channels.size() < 2) fail("unet_channels needs at least two levels");
    for (std::size_t i = 0; i < unet_channels.size(); ++i) {
        if (unet_channels[i] < 1) fail("unet_channels must be positive");
        if (i > 0 && unet_channels[i] <= unet_channels[i - 1]) fail("unet_channels must be strictly increasing");
    }
    if (style_channels.size() != 4) fail("style encoder uses exactly four conv blocks");
    for (int c : style_channels)
        if (c < 1) fail("style_channels must be positive");
    if (decoder_channels < 1 || segmenter_channels < 1) fail("decoder/segmenter channels must be positive");
    if (!(gumbel_temperature > 0.0)) fail("gumbel_temperature must be > 0");
    if (in_channels < 1) fail("in_channels must be positive");
    if (num_classes < 2) fail("num_classes must be >= 2");
}

template <typename T>
AnatomyRep<T> gumbel_binarize(const ad::Var<T>& logits, double temperature, const Tensor<T>& noise, bool hard)
{
    if (!(temperature > 0.0)) throw std::invalid_argument("gumbel_binarize: temperature must be > 0");
    if (noise.shape() != logits.shape()) throw std::invalid_argument("gumbel_binarize: noise shape mismatch");
    ad::Var<T> perturbed = ad::scale(ad::add(logits, ad::Var<T>(noise)), static_cast<T>(1.0 / temperature));
    AnatomyRep<T> rep;
    rep.soft = ad::softmax(perturbed);

    const Tensor<T>& s = rep.soft.value();
    const std::size_t c = static_cast<std::size_t>(s.dim(-1));
    rep.hard = Tensor<T>(s.shape());
    for (std::size_t r = 0; r < s.numel() / c; ++r) {
        const T* row = s.data() + r * c;
        rep.hard[r * c + static_cast<std::size_t>(std::max_element(row, row + c) - row)] = T(1);
    }
    rep.value = hard ? ad::straight_through(rep.hard, rep.soft) : rep.soft;
    return rep;
}

template <typename T>
AnatomyRep<T> gumbel_binarize(const ad::Var<T>& logits, double temperature, Rng* rng, bool hard)
{
    Tensor<T> noise(logits.shape());
    if (rng) {
        for (auto& g : noise.values()) g = static_cast<T>(rng->gumbel());
    }
    return gumbel_binarize(logits, temperature, noise, hard);
}

template <typename T>
AnatomyEncoder<T>::AnatomyEncoder(const NetConfig& config, Rng& init) : config_(config)
{
    config_.validate();
    const auto& ch = config_.unet_channels;
    const T slope = T(0);
    int in = config_.in_channels;
    for (int c : ch) {
        down_.push_back({ConvBnAct<T>(in, c, 3, 1, slope, init), ConvBnAct<T>(c, c, 3, 1, slope, init)});
        in = c;
    }
    for (std::size_t i = ch.size() - 1; i-- > 0;) {
        up_.emplace_back(ch[i + 1], ch[i], init);
        merge_.push_back({ConvBnAct<T>(2 * ch[i], ch[i], 3, 1, slope, init), ConvBnAct<T>(ch[i], ch[i], 3, 1, slope, init)});
    }
    head_ = Conv2d<T>(ch.front(), config_.anatomy_channels, 1, 1, 0, init);
}

template <typename T>
ad::Var<T> AnatomyEncoder<T>::logits(const ad::Var<T>& images, bool training)
{
    const Shape& s = images.shape();
    const int m = config_.spatial_multiple();
    if (s.size() != 4 || s[3] != config_.in_channels) {
        throw std::invalid_argument("anatomy encoder expects NHWC images with " +
                                    std::to_string(config_.in_channels) + " channels, got " + shape_str(s));
    }
    if (s[1] % m != 0 || s[2] % m != 0) {
        throw std::invalid_argument("anatomy encoder: spatial size " + std::to_string(s[1]) + "x" +
                                    std::to_string(s[2]) + " is not divisible by " + std::to_string(m));
    }
    std::vector<ad::Var<T>> skips;
    ad::Var<T> h = images;
    for (std::size_t i = 0; i < down_.size(); ++i) {
        if (i > 0) h = ad::max_pool2x2(h);
        h = down_[i].second(down_[i].first(h, training), training);
        skips.push_back(h);
    }
    for (std::size_t j = 0; j < up_.size(); ++j) {
        const std::size_t level = down_.size() - 2 - j;
        h = ad::concat_channels(skips[level], up_[j](h));
        h = merge_[j].second(merge_[j].first(h, training), training);
    }
    return head_(h);
}

template <typename T>
AnatomyRep<T> AnatomyEncoder<T>::encode(const ad::Var<T>& images, Rng& rng, bool training)
{
    return gumbel_binarize(logits(images, training), config_.gumbel_temperature, training ? &rng : nullptr, true);
}

template <typename T>
void AnatomyEncoder<T>::collect(ParameterSet<T>& out, const std::string& prefix)
{
    for (std::size_t i = 0; i < down_.size(); ++i) {
        down_[i].first.collect(out, prefix + ".down" + std::to_string(i) + ".a");
        down_[i].second.collect(out, prefix + ".down" + std::to_string(i) + ".b");
    }
    for (std::size_t j = 0; j < up_.size(); ++j) {
        up_[j].collect(out, prefix + ".up" + std::to_string(j));
        merge_[j].first.collect(out, prefix + ".merge" + std::to_string(j) + ".a");
        merge_[j].second.collect(out, prefix + ".merge" + std::to_string(j) + ".b");
    }
    head_.collect(out, prefix + ".head");
}

template <typename T>
StyleEncoder<T>::StyleEncoder(const NetConfig& config, Rng& init) : config_(config)
{
    config_.validate();
    int in = config_.in_channels;
    for (int c : config_.style_channels) {
        blocks_.emplace_back(in, c, 3, 2, static_cast<T>(kStyleSlope), init);
        in = c;
    }
    mean_head_ = Linear<T>(in, config_.style_dim, init);
    // Small logvar weights start the posterior near unit variance.
    logvar_head_ = Linear<T>(in, config_.style_dim, init, 0.1);
}

template <typename T>
StyleCode<T> StyleEncoder<T>::encode(const ad::Var<T>& images, const Tensor<T>& eps, bool training)
{
    ad::Var<T> h = images;
    for (auto& block : blocks_) h = block(h, training);
    ad::Var<T> pooled = ad::global_avg_pool(h);

    StyleCode<T> code;
    code.mean = mean_head_(pooled);
    code.logvar = logvar_head_(pooled);
    if (eps.shape() != code.mean.shape()) {
        throw std::invalid_argument("style noise shape " + shape_str(eps.shape()) + " does not match " +
                                    shape_str(code.mean.shape()));
    }
    code.eps = eps;
    ad::Var<T> stddev = ad::exp(ad::scale(code.logvar, T(0.5)));
    code.z = ad::add(code.mean, ad::mul(stddev, ad::Var<T>(eps)));
    return code;
}

template <typename T>
StyleCode<T> StyleEncoder<T>::encode(const ad::Var<T>& images, Rng& rng, bool training)
{
    Tensor<T> eps({images.dim(0), config_.style_dim});
    for (auto& e : eps.values()) e = static_cast<T>(rng.normal());
    return encode(images, eps, training);
}

template <typename T>
void StyleEncoder<T>::collect(ParameterSet<T>& out, const std::string& prefix)
{
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + ".block" + std::to_string(i));
    mean_head_.collect(out, prefix + ".mean");
    logvar_head_.collect(out, prefix + ".logvar");
}

template <typename T>
Decoder<T>::Decoder(const NetConfig& config, Rng& init) : config_(config)
{
    config_.validate();
    const int c = config_.decoder_channels;
    convs_.emplace_back(config_.anatomy_channels + config_.style_dim, c, 3, 1, 1, init);
    convs_.emplace_back(c, c, 3, 1, 1, init);
    convs_.emplace_back(c, c, 3, 1, 1, init);
    convs_.emplace_back(c, config_.in_channels, 3, 1, 1, init);
}

template <typename T>
ad::Var<T> Decoder<T>::reconstruct(const ad::Var<T>& anatomy, const ad::Var<T>& style_z) const
{
    const Shape& a = anatomy.shape();
    const Shape& z = style_z.shape();
    if (a.size() != 4 || z.size() != 2 || a[0] != z[0]) {
        throw std::invalid_argument("reconstruct: anatomy " + shape_str(a) + " and style " + shape_str(z) +
                                    " disagree on batch size");
    }
    if (a[3] != config_.anatomy_channels || z[1] != config_.style_dim) {
        throw std::invalid_argument("reconstruct: channel counts do not match the decoder config");
    }
    ad::Var<T> h = ad::concat_channels(anatomy, ad::tile_spatial(style_z, a[1], a[2]));
    for (std::size_t i = 0; i + 1 < convs_.size(); ++i) h = ad::leaky_relu(convs_[i](h), static_cast<T>(kDecoderSlope));
    return ad::sigmoid(convs_.back()(h));
}

template <typename T>
void Decoder<T>::collect(ParameterSet<T>& out, const std::string& prefix)
{
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(out, prefix + ".conv" + std::to_string(i));
}

template <typename T>
Segmenter<T>::Segmenter(const NetConfig& config, Rng& init)
    : block3_(config.anatomy_channels, config.segmenter_channels, 3, 1, static_cast<T>(kSegmenterSlope), init),
      block1_(config.segmenter_channels, config.segmenter_channels, 1, 1, static_cast<T>(kSegmenterSlope), init),
      out_(config.segmenter_channels, config.num_classes, 1, 1, 0, init)
{
}

template <typename T>
ad::Var<T> Segmenter<T>::segment(const ad::Var<T>& anatomy, bool training)
{
    return ad::softmax(out_(block1_(block3_(anatomy, training), training)));
}

template <typename T>
void Segmenter<T>::collect(ParameterSet<T>& out, const std::string& prefix)
{
    block3_.collect(out, prefix + ".block3");
    block1_.collect(out, prefix + ".block1");
    out_.collect(out, prefix + ".out");
}

template <typename T>
CddModel<T>::CddModel(const NetConfig& config, std::uint64_t init_seed) : config_(config)
{
    config_.validate();
    Rng root(init_seed);
    Rng ana = root.split(), sty = root.split(), dec = root.split(), seg = root.split();
    anatomy_ = AnatomyEncoder<T>(config_, ana);
    style_ = StyleEncoder<T>(config_, sty);
    decoder_ = Decoder<T>(config_, dec);
    segmenter_ = Segmenter<T>(config_, seg);
}

template <typename T>
ParameterSet<T> CddModel<T>::parameter_set()
{
    ParameterSet<T> set;
    anatomy_.collect(set, "ana");
    style_.collect(set, "sty");
    decoder_.collect(set, "dec");
    segmenter_.collect(set, "seg");
    return set;
}

template <typename T>
Tensor<T> CddModel<T>::predict(const Tensor<T>& images)
{
    ad::NoGradGuard guard;
    Rng unused(0);
    AnatomyRep<T> rep = anatomy_.encode(ad::Var<T>(images), unused, false);
    return segmenter_.segment(rep.value, false).value();
}

#define CDD_INSTANTIATE_NETS(T)                                                                            \
    template AnatomyRep<T> gumbel_binarize(const ad::Var<T>&, double, Rng*, bool);                        \
    template AnatomyRep<T> gumbel_binarize(const ad::Var<T>&, double, const Tensor<T>&, bool);            \
    template class AnatomyEncoder<T>;                                                                      \
    template class StyleEncoder<T>;                                                                        \
    template class Decoder<T>;                                                                             \
    template class Segmenter<T>;                                                                           \
    template class CddModel<T>;

CDD_INSTANTIATE_NETS(float)
CDD_INSTANTIATE_NETS(double)

}  // namespace cdd::nets
