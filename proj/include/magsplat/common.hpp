#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace magsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

enum class ErrorKind {
  // geometry
  BehindCamera,
  NonPositiveDepth,
  DegenerateConfiguration,
  LengthMismatch,
  // gaussian core
  NonPositiveScale,
  SingularCovariance,
  // deformation
  EmptyControlSet,
  ZeroBlend,
  // losses
  ShapeMismatch,
  // pose
  InsufficientCorrespondences,
  NoConsensus,
  SingularNormalMatrix,
  SingularSystem,
  // pipeline / io
  BadMagic,
  TruncatedPayload,
  EmptyInitialization,
  ConfigError,
  ConfigHashMismatch,
  IoError,
  InvalidArgument,
};

const char* to_string(ErrorKind kind);

/// Process exit code for an error category: 2 config, 3 data, 4 numerical.
int exit_code_for(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Row-major interleaved raster. Images are Raster<double> with 3 channels in
/// [0,1]; masks are Raster<uint8_t> with one channel holding 0 or 1.
template <typename T>
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int w, int h, int c, T fill = T{})
      : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

  size_t index(int x, int y, int c = 0) const {
    return (static_cast<size_t>(y) * width + x) * channels + c;
  }
  T& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
  bool same_shape(const Raster& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  bool empty() const { return data.empty(); }
};

using Image = Raster<double>;
using Mask = Raster<std::uint8_t>;

struct Pixel {
  int x = 0;
  int y = 0;
  bool operator==(const Pixel&) const = default;
  auto operator<=>(const Pixel&) const = default;
};

}  // namespace magsplat
