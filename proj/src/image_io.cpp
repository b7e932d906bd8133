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

#include "cdd/image_io.hpp"

#include <png.h>

#include <cstring>
#include <string>

#include "cdd/errors.hpp"

namespace cdd::io {

namespace {

Raster decode(const std::filesystem::path& path, bool labels)
{
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw DataError("cannot read PNG " + path.string() + ": " + image.message);
    }
    const bool colour = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    Raster r;
    r.height = static_cast<int>(image.height);
    r.width = static_cast<int>(image.width);
    if (labels) {
        // Keep stored values; linear formats avoid any gamma conversion.
        image.format = colour ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
        if (image.format & PNG_FORMAT_FLAG_ALPHA) image.format &= ~PNG_FORMAT_FLAG_ALPHA;
    } else {
        image.format = PNG_FORMAT_RGB;
    }
    const int stored = PNG_IMAGE_SAMPLE_CHANNELS(image.format);
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw DataError("cannot decode PNG " + path.string() + ": " + msg);
    }
    if (labels && stored == 3) {
        r.channels = 1;
        r.pixels.resize(static_cast<std::size_t>(r.height) * r.width);
        for (std::size_t i = 0; i < r.pixels.size(); ++i) r.pixels[i] = buf[3 * i];
    } else {
        r.channels = stored;
        r.pixels = std::move(buf);
    }
    return r;
}

}  // namespace

Raster read_png_rgb(const std::filesystem::path& path) { return decode(path, false); }

Raster read_png_labels(const std::filesystem::path& path) { return decode(path, true); }

void write_png(const std::filesystem::path& path, const Raster& raster)
{
    if (raster.channels != 1 && raster.channels != 3) throw DataError("write_png: channels must be 1 or 3");
    if (raster.pixels.size() != static_cast<std::size_t>(raster.height) * raster.width * raster.channels) {
        throw DataError("write_png: pixel buffer does not match dimensions");
    }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(raster.width);
    image.height = static_cast<png_uint_32>(raster.height);
    image.format = raster.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, raster.pixels.data(), 0, nullptr)) {
        throw DataError("cannot write PNG " + path.string() + ": " + image.message);
    }
}

}  // namespace cdd::io
