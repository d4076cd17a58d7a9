#pragma once

#include <cstdio>
#include <functional>
#include <string>

#include "latcomp/mask.hpp"
#include "latcomp/tensor.hpp"

namespace latcomp {

// Reads an 8- or 16-bit PNG (gray, RGB, palette; alpha dropped) as a 3 x H x W
// tensor in [0, 1]. When `resolution` > 0 the image is bilinearly resized to
// resolution x resolution.
Tensor read_image(const std::string& path, int resolution = 0);

// Reads a PNG mask, resizes it nearest-neighbour to height x width (when
// given) and binarizes at 8-bit value > 127. Empty masks are logged.
PixelMask read_mask(const std::string& path, int height = 0, int width = 0);

// 8-bit RGB PNG; values are clamped to [0, 1].
void write_image(const std::string& path, const Tensor& image);
// 8-bit grayscale PNG, 0 or 255.
void write_mask(const std::string& path, const PixelMask& mask);
// Min-max normalised 8-bit grayscale PNG; a constant map becomes uniform mid-gray.
void write_heatmap(const std::string& path, const Plane& map);
Plane normalize_min_max(const Plane& map);

// Writes through `writer` to a temporary file next to `path`, then renames it
// into place. If `writer` throws, the temporary is removed and `path` is left
// untouched. Parent directories are created as needed.
void atomic_write(const std::string& path, const std::function<void(std::FILE*)>& writer);
void write_text_atomic(const std::string& path, const std::string& contents);

}  // namespace latcomp
