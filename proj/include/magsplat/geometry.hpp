#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "magsplat/common.hpp"

namespace magsplat {

/// Hamilton quaternion, scalar first. Unit quaternions represent rotations.
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quaternion identity() { return {}; }
  static Quaternion from_axis_angle(const Vec3& axis, double angle);
  /// Exponential map of a rotation vector (axis * angle).
  static Quaternion exp(const Vec3& rotvec);
  static Quaternion from_matrix(const Mat3& R);

  Vec4 coeffs() const { return {w, x, y, z}; }
  static Quaternion from_coeffs(const Vec4& c) { return {c[0], c[1], c[2], c[3]}; }

  double norm() const;
  double squared_norm() const { return w * w + x * x + y * y + z * z; }
  /// Unit length with w >= 0.
  Quaternion normalized() const;
  Quaternion conjugate() const { return {w, -x, -y, -z}; }
  Mat3 to_matrix() const;
  Vec3 rotate(const Vec3& v) const;
  /// Geodesic rotation angle in radians, in [0, pi].
  double angle() const;
};

Quaternion quat_multiply(const Quaternion& a, const Quaternion& b);
inline Quaternion operator*(const Quaternion& a, const Quaternion& b) { return quat_multiply(a, b); }

/// Matrices of the Hamilton product on (w, x, y, z) coefficients:
/// coeffs(a * b) = quat_left_matrix(a) * coeffs(b) = quat_right_matrix(b) * coeffs(a).
Eigen::Matrix4d quat_left_matrix(const Quaternion& a);
Eigen::Matrix4d quat_right_matrix(const Quaternion& b);

/// Vector-Jacobian product of the rotation-matrix formula: given dL/dR for
/// R = R(q) with q unit, returns dL/dq (w, x, y, z) without the projection
/// onto the tangent of the unit sphere.
Vec4 rotation_matrix_vjp(const Mat3& dl_dR, const Vec4& q);

/// Rigid transform: p -> R p + t.
struct SE3 {
  Quaternion rotation;
  Vec3 translation = Vec3::Zero();

  static SE3 identity() { return {}; }
  /// Retraction used by the optimizers: rotation Exp(omega), translation v.
  /// Twist layout is (v, omega).
  static SE3 exp(const Eigen::Matrix<double, 6, 1>& twist);

  SE3 inverse() const;
  Mat3 rotation_matrix() const { return rotation.to_matrix(); }
  Vec3 apply(const Vec3& p) const { return rotation.rotate(p) + translation; }
};

SE3 compose(const SE3& a, const SE3& b);
inline SE3 operator*(const SE3& a, const SE3& b) { return compose(a, b); }
Vec3 se3_apply(const SE3& T, const Vec3& p);

struct Sim3 {
  double scale = 1.0;
  Quaternion rotation;
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * rotation.rotate(p) + translation; }
  /// Applies the similarity to a camera-to-world pose.
  SE3 apply(const SE3& pose_c2w) const;
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Throws InvalidArgument when the invariants do not hold.
  void validate() const;
  CameraIntrinsics scaled(double factor) const;
};

inline constexpr double kMinDepth = 1e-6;

/// Pixel coordinates use the pixel index convention: pixel (x, y) is centered
/// at coordinate (x, y).
Vec2 project(const CameraIntrinsics& K, const Vec3& p_cam);
Vec3 unproject(const CameraIntrinsics& K, const Vec2& u, double depth);
Mat23 projection_jacobian(const CameraIntrinsics& K, const Vec3& p_cam);

/// Least-squares similarity with dst ~ s R src + t.
/// Throws DegenerateConfiguration when the cross-covariance has rank < 2.
Sim3 umeyama_sim3(std::span<const Vec3> src, std::span<const Vec3> dst);

struct TrajectoryMetrics {
  double ate = 0.0;        // RMSE of aligned positions
  double rpe_trans = 0.0;  // RMSE over consecutive relative poses
  double rpe_rot = 0.0;    // degrees, RMSE of geodesic angles
};

/// Both trajectories hold camera-to-world poses. The estimate is Sim(3)
/// aligned to the ground truth before errors are taken.
TrajectoryMetrics trajectory_metrics(std::span<const SE3> est, std::span<const SE3> gt);

/// Aligns est to gt with Umeyama on camera centers and returns the aligned poses.
std::vector<SE3> align_trajectory(std::span<const SE3> est, std::span<const SE3> gt);

struct StampedPose {
  double t = 0.0;
  SE3 pose;
};

/// TUM-style text: `t tx ty tz qw qx qy qz` per line, '#' starts a comment.
std::vector<StampedPose> read_trajectory(const std::string& path);
void write_trajectory(const std::string& path, std::span<const StampedPose> poses);

}  // namespace magsplat
