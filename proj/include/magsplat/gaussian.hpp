#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "magsplat/common.hpp"
#include "magsplat/geometry.hpp"

namespace magsplat {

inline constexpr double kLowPassDilation = 0.3;     // px^2 added to the 2D covariance diagonal
inline constexpr double kAlphaMax = 0.99;
inline constexpr double kAlphaMin = 1.0 / 255.0;
inline constexpr double kTransmittanceMin = 1e-4;
inline constexpr double kFootprintSigmas = 3.0;
inline constexpr double kShDcOffset = 0.5;
inline constexpr int kMaxShDegree = 3;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Canonical-space splat. SH coefficients are stored basis-major:
/// sh[k * 3 + channel].
struct GaussianPrimitive {
  Vec3 mu = Vec3::Zero();
  Quaternion q;
  Vec3 s = Vec3::Ones();
  double opacity = 0.1;
  std::vector<double> sh;
  bool dynamic_label = false;
};

struct GaussianScene {
  std::vector<GaussianPrimitive> primitives;
  int sh_degree = 2;

  size_t size() const { return primitives.size(); }
  /// Throws InvalidArgument on scale/opacity/SH-length violations.
  void validate() const;
};

/// Sigma = R S S^T R^T with R from q / |q|.
Mat3 assemble_covariance(const Quaternion& q, const Vec3& s);

using ShBasis = std::array<double, 16>;

/// Real SH basis values for the first (degree+1)^2 functions at unit v.
ShBasis sh_basis(int degree, const Vec3& v);
/// Basis values plus d(basis)/dv.
void sh_basis_with_gradient(int degree, const Vec3& v, ShBasis& basis,
                            std::array<Vec3, 16>& dbasis);

/// Per-channel basis sum, no offset and no clamp.
Vec3 eval_sh_raw(std::span<const double> sh, int degree, const Vec3& v);
/// Color as rendered: clamp(basis sum + 0.5, 0, 1).
Vec3 eval_sh(std::span<const double> sh, int degree, const Vec3& v);

/// Sets the DC coefficients so that eval_sh returns `rgb` for any view.
void set_sh_from_rgb(std::vector<double>& sh, int degree, const Vec3& rgb);

struct SplattedGaussian {
  Vec2 mu2d = Vec2::Zero();
  Mat2 sigma2d = Mat2::Identity();
  double depth = 0.0;
  double opacity = 0.0;
  Vec3 view_color = Vec3::Zero();
  /// Half extent of the square footprint: 3 sqrt(lambda_max(sigma2d)).
  double radius = 0.0;
};

/// World-to-camera pose. Returns nullopt when culled (behind the camera or
/// the footprint misses the image).
std::optional<SplattedGaussian> project_gaussian(const GaussianPrimitive& g, int sh_degree,
                                                 const SE3& world_to_cam,
                                                 const CameraIntrinsics& K);

/// Inside the square footprint shared by the renderer and its oracle.
inline bool in_footprint(const SplattedGaussian& sg, double px, double py) {
  return std::abs(px - sg.mu2d.x()) <= sg.radius && std::abs(py - sg.mu2d.y()) <= sg.radius;
}

/// opacity * exp(-0.5 d^T sigma2d^-1 d), clamped to kAlphaMax.
double eval_alpha(const SplattedGaussian& sg, const Vec2& pixel);

/// MGS1 container: magic, u64 count, u32 sh_degree, then per primitive
/// mu[3], q[4] (w,x,y,z), s[3], opacity, sh[3 (deg+1)^2] as f64 and the
/// dynamic label as u8.
std::vector<std::uint8_t> encode_scene(const GaussianScene& scene);
GaussianScene decode_scene(std::span<const std::uint8_t> bytes);
void write_scene(const std::string& path, const GaussianScene& scene);
GaussianScene read_scene(const std::string& path);

}  // namespace magsplat
