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

#ifndef CDD_NETS_HPP
#define CDD_NETS_HPP

#include <vector>

#include "cdd/layers.hpp"

namespace cdd::nets {

struct NetConfig {
    int anatomy_channels = 8;  // T
    int style_dim = 16;        // Z
    std::vector<int> unet_channels{16, 32, 64, 128, 256};
    std::vector<int> style_channels{16, 32, 64, 128};
    int decoder_channels = 16;
    int segmenter_channels = 16;
    double gumbel_temperature = 0.5;
    int in_channels = 3;
    int num_classes = 3;

    // Spatial sizes must be divisible by this (one halving per U-Net level below the top).
    [[nodiscard]] int spatial_multiple() const { return 1 << (static_cast<int>(unet_channels.size()) - 1); }
    void validate() const;

    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

// Binary anatomical factor. `value` is the straight-through tensor: its
// forward value is `hard`, its gradient flows into `soft`.
template <typename T>
struct AnatomyRep {
    Tensor<T> hard;
    ad::Var<T> soft;
    ad::Var<T> value;
};

// Gaussian style factor; z = mean + exp(logvar / 2) * eps.
template <typename T>
struct StyleCode {
    ad::Var<T> mean;
    ad::Var<T> logvar;
    ad::Var<T> z;
    Tensor<T> eps;
};

// Categorical gumbel-softmax over the last axis. `noise` supplies g directly
// (same shape as logits); with an rng the noise is sampled, with neither it is zero.
// hard=false leaves `value` equal to the soft relaxation.
template <typename T>
AnatomyRep<T> gumbel_binarize(const ad::Var<T>& logits, double temperature, Rng* rng, bool hard = true);
template <typename T>
AnatomyRep<T> gumbel_binarize(const ad::Var<T>& logits, double temperature, const Tensor<T>& noise,
                              bool hard = true);

// U-Net with batch norm producing T logit channels at input resolution.
template <typename T>
class AnatomyEncoder {
public:
    AnatomyEncoder() = default;
    AnatomyEncoder(const NetConfig& config, Rng& init);

    ad::Var<T> logits(const ad::Var<T>& images, bool training);
    // Training mode draws gumbel noise from rng; eval mode is a noise-free argmax.
    AnatomyRep<T> encode(const ad::Var<T>& images, Rng& rng, bool training);
    void collect(ParameterSet<T>& out, const std::string& prefix);

private:
    struct Level {
        ConvBnAct<T> first;
        ConvBnAct<T> second;
    };
    NetConfig config_;
    std::vector<Level> down_;
    std::vector<ConvTranspose2x2<T>> up_;
    std::vector<Level> merge_;
    Conv2d<T> head_;
};

// VAE encoder: four stride-2 conv blocks, global pooling, two linear heads.
template <typename T>
class StyleEncoder {
public:
    StyleEncoder() = default;
    StyleEncoder(const NetConfig& config, Rng& init);

    StyleCode<T> encode(const ad::Var<T>& images, Rng& rng, bool training);
    StyleCode<T> encode(const ad::Var<T>& images, const Tensor<T>& eps, bool training);
    void collect(ParameterSet<T>& out, const std::string& prefix);

private:
    NetConfig config_;
    std::vector<ConvBnAct<T>> blocks_;
    Linear<T> mean_head_;
    Linear<T> logvar_head_;
};

// Style vector tiled over the image, concatenated with the anatomy channels,
// then four conv blocks; the last one ends in a sigmoid.
template <typename T>
class Decoder {
public:
    Decoder() = default;
    Decoder(const NetConfig& config, Rng& init);

    ad::Var<T> reconstruct(const ad::Var<T>& anatomy, const ad::Var<T>& style_z) const;
    void collect(ParameterSet<T>& out, const std::string& prefix);

private:
    NetConfig config_;
    std::vector<Conv2d<T>> convs_;
};

// 3x3 and 1x1 conv blocks (batch norm, leaky ReLU 0.2), then a 1x1 output conv and softmax.
template <typename T>
class Segmenter {
public:
    Segmenter() = default;
    Segmenter(const NetConfig& config, Rng& init);

    ad::Var<T> segment(const ad::Var<T>& anatomy, bool training);
    void collect(ParameterSet<T>& out, const std::string& prefix);

private:
    ConvBnAct<T> block3_;
    ConvBnAct<T> block1_;
    Conv2d<T> out_;
};

template <typename T>
class CddModel {
public:
    CddModel(const NetConfig& config, std::uint64_t init_seed);

    [[nodiscard]] const NetConfig& config() const noexcept { return config_; }
    AnatomyEncoder<T>& anatomy() noexcept { return anatomy_; }
    StyleEncoder<T>& style() noexcept { return style_; }
    Decoder<T>& decoder() noexcept { return decoder_; }
    Segmenter<T>& segmenter() noexcept { return segmenter_; }

    // Names are prefixed with ana., sty., dec., seg.
    [[nodiscard]] ParameterSet<T> parameter_set();

    // Deterministic image -> anatomy -> class probabilities (eval mode, no tape).
    Tensor<T> predict(const Tensor<T>& images);

private:
    NetConfig config_;
    AnatomyEncoder<T> anatomy_;
    StyleEncoder<T> style_;
    Decoder<T> decoder_;
    Segmenter<T> segmenter_;
};

}  // namespace cdd::nets

#endif  // CDD_NETS_HPP
