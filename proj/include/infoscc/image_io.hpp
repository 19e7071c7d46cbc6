#pragma once

#include "infoscc/image.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace infoscc {

/// Decodes a PNG/JPEG file into a (1, channels, size, size) batch in [-1, 1],
/// resizing when the stored resolution differs. Throws Error if undecodable.
ImageBatch<float> read_image(const std::filesystem::path& path, int size, int channels);

/// 8-bit PNG bytes of sample `index`.
std::string encode_png(const ImageBatch<float>& images, int index = 0);

ImageBatch<float> decode_png(std::string_view bytes, int channels);

void write_png(const std::filesystem::path& path, const ImageBatch<float>& images, int index = 0);

/// Tiles a batch into one image grid with `columns` images per row.
ImageBatch<float> tile_images(const ImageBatch<float>& images, int columns);

}  // namespace infoscc
