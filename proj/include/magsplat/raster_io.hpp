#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "magsplat/common.hpp"

namespace magsplat {

enum class RasterDtype : std::uint32_t { F32 = 0, U8 = 1 };

/// RAS1 container: "RAS1", u32 width, height, channels, u32 dtype code, then
/// the little-endian row-major payload.
struct RasterFile {
  int width = 0;
  int height = 0;
  int channels = 0;
  RasterDtype dtype = RasterDtype::F32;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  Raster<double> to_f64() const;
  Mask to_mask() const;
};

std::vector<std::uint8_t> encode_raster(const RasterFile& r);
RasterFile decode_raster(std::span<const std::uint8_t> bytes);

RasterFile read_raster(const std::string& path);
void write_raster(const RasterFile& r, const std::string& path);

/// Doubles are stored as f32.
void write_raster(const Raster<double>& r, const std::string& path);
void write_raster(const Mask& m, const std::string& path);
Raster<double> read_raster_f64(const std::string& path);
Mask read_mask(const std::string& path);

}  // namespace magsplat
