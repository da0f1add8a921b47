#include "magsplat/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include <png.h>

namespace magsplat {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image read_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw Error(ErrorKind::IoError, "cannot read PNG " + path + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorKind::IoError, "cannot decode PNG " + path + ": " + img.message);
  }
  Image out(static_cast<int>(img.width), static_cast<int>(img.height), 3, 0.0);
  for (size_t i = 0; i < buf.size(); ++i) out.data[i] = buf[i] / 255.0;
  return out;
}

void write_png(const std::string& path, const Image& image) {
  if (image.channels != 3 && image.channels != 1) {
    throw Error(ErrorKind::ShapeMismatch, "PNG output needs 1 or 3 channels");
  }
  std::vector<std::uint8_t> buf(image.data.size());
  for (size_t i = 0; i < buf.size(); ++i) {
    buf[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.data[i], 0.0, 1.0) * 255.0));
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw Error(ErrorKind::IoError, "cannot open " + path + " for writing");
  if (!png_image_write_to_stdio(&img, f.get(), 0, buf.data(), 0, nullptr)) {
    throw Error(ErrorKind::IoError, "cannot encode PNG " + path + ": " + img.message);
  }
}

}  // namespace magsplat
