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

#ifndef CDD_CHECKPOINT_HPP
#define CDD_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "cdd/nets.hpp"

namespace cdd::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

nlohmann::json net_config_to_json(const nets::NetConfig& config);
nets::NetConfig net_config_from_json(const nlohmann::json& j);

// Layout: "CDDCKPT\0", u32 version, u64 header length, JSON header, then the
// float32 payload of every tensor listed in the header, in order.
struct Checkpoint {
    nets::NetConfig config;
    std::map<std::string, Tensor<float>> tensors;
    nlohmann::json metadata = nlohmann::json::object();
};

// Writes to a temporary file and renames it, so a crash never leaves a
// truncated checkpoint behind.
void save(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load(const std::filesystem::path& path);

// Model parameters and batch-norm buffers under their collected names.
Checkpoint capture(nets::CddModel<float>& model);

// Copies tensors into the model. Throws ConfigError when the checkpoint was
// built for a different NetConfig or lacks a tensor.
void restore(nets::CddModel<float>& model, const Checkpoint& checkpoint);

}  // namespace cdd::ckpt

#endif  // CDD_CHECKPOINT_HPP
