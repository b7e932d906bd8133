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

#include "cdd/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "cdd/errors.hpp"

namespace cdd::ckpt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'D', 'D', 'C', 'K', 'P', 'T', '\0'};

template <typename U>
void write_pod(std::ostream& os, U v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_pod(std::istream& is, const fs::path& path)
{
    U v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw DataError("truncated checkpoint " + path.string());
    return v;
}

}  // namespace

json net_config_to_json(const nets::NetConfig& c)
{
    return json{{"anatomy_channels", c.anatomy_channels},
                {"style_dim", c.style_dim},
                {"unet_channels", c.unet_channels},
                {"style_channels", c.style_channels},
                {"decoder_channels", c.decoder_channels},
                {"segmenter_channels", c.segmenter_channels},
                {"gumbel_temperature", c.gumbel_temperature},
                {"in_channels", c.in_channels},
                {"num_classes", c.num_classes}};
}

nets::NetConfig net_config_from_json(const json& j)
{
    try {
        nets::NetConfig c;
        c.anatomy_channels = j.at("anatomy_channels").get<int>();
        c.style_dim = j.at("style_dim").get<int>();
        c.unet_channels = j.at("unet_channels").get<std::vector<int>>();
        c.style_channels = j.at("style_channels").get<std::vector<int>>();
        c.decoder_channels = j.at("decoder_channels").get<int>();
        c.segmenter_channels = j.at("segmenter_channels").get<int>();
        c.gumbel_temperature = j.at("gumbel_temperature").get<double>();
        c.in_channels = j.at("in_channels").get<int>();
        c.num_classes = j.at("num_classes").get<int>();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed network config: ") + e.what());
    }
}

void save(const fs::path& path, const Checkpoint& checkpoint)
{
    json tensors = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : checkpoint.tensors) {
        tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.numel();
    }
    const json header{{"config", net_config_to_json(checkpoint.config)},
                      {"tensors", tensors},
                      {"metadata", checkpoint.metadata}};
    const std::string text = header.dump();

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot open " + tmp.string() + " for writing");
        os.write(kMagic, sizeof(kMagic));
        write_pod<std::uint32_t>(os, kFormatVersion);
        write_pod<std::uint64_t>(os, text.size());
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& [name, t] : checkpoint.tensors) {
            os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
        }
        if (!os.flush()) throw DataError("failed writing checkpoint " + tmp.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load(const fs::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path.string());
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError(path.string() + " is not a checkpoint file");
    }
    const auto version = read_pod<std::uint32_t>(is, path);
    if (version != kFormatVersion) {
        throw DataError("checkpoint " + path.string() + " has unsupported version " + std::to_string(version));
    }
    const auto length = read_pod<std::uint64_t>(is, path);
    std::string text(length, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(length))) throw DataError("truncated checkpoint " + path.string());
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }
    Checkpoint out;
    out.config = net_config_from_json(header.at("config"));
    out.metadata = header.value("metadata", json::object());
    for (const auto& entry : header.at("tensors")) {
        Tensor<float> t = Tensor<float>::uninitialized(entry.at("shape").get<Shape>());
        if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)))) {
            throw DataError("truncated checkpoint payload in " + path.string());
        }
        out.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
    }
    return out;
}

Checkpoint capture(nets::CddModel<float>& model)
{
    Checkpoint c;
    c.config = model.config();
    auto set = model.parameter_set();
    for (const auto& p : set.parameters) c.tensors.emplace(p.name, p.var.value());
    for (const auto& b : set.buffers) c.tensors.emplace(b.name, *b.tensor);
    return c;
}

void restore(nets::CddModel<float>& model, const Checkpoint& checkpoint)
{
    if (!(checkpoint.config == model.config())) {
        throw ConfigError("checkpoint network config " + net_config_to_json(checkpoint.config).dump() +
                          " does not match " + net_config_to_json(model.config()).dump());
    }
    auto set = model.parameter_set();
    auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor<float>& {
        const auto it = checkpoint.tensors.find(name);
        if (it == checkpoint.tensors.end()) throw ConfigError("checkpoint lacks tensor " + name);
        if (it->second.shape() != shape) {
            throw ConfigError("checkpoint tensor " + name + " has shape " + shape_str(it->second.shape()) +
                              ", model expects " + shape_str(shape));
        }
        return it->second;
    };
    for (auto& p : set.parameters) p.var.mutable_value() = fetch(p.name, p.var.shape());
    for (auto& b : set.buffers) *b.tensor = fetch(b.name, b.tensor->shape());
}

}  // namespace cdd::ckpt
