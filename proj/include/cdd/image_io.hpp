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

#ifndef CDD_IMAGE_IO_HPP
#define CDD_IMAGE_IO_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cdd::io {

struct Raster {
    int height = 0;
    int width = 0;
    int channels = 0;  // 1 or 3
    std::vector<std::uint8_t> pixels;
};

// Decodes any PNG into 8-bit RGB.
Raster read_png_rgb(const std::filesystem::path& path);

// Decodes a label PNG without colour conversion. Colour inputs keep their
// first channel only.
Raster read_png_labels(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Raster& raster);

}  // namespace cdd::io

#endif  // CDD_IMAGE_IO_HPP
