#pragma once

#include <string>

#include "magsplat/common.hpp"

namespace magsplat {

/// 8-bit PNG to an H x W x 3 image in [0, 1]. Gray and alpha are handled
/// (gray is replicated, alpha dropped). 16-bit files are reduced to 8 bits.
Image read_png(const std::string& path);

/// Writes an H x W x 3 (or x 1) image, clamped to [0, 1] and rounded to 8 bits.
void write_png(const std::string& path, const Image& image);

}  // namespace magsplat
