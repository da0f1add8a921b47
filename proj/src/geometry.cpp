#include "magsplat/geometry.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <Eigen/Dense>

namespace magsplat {

Quaternion Quaternion::from_axis_angle(const Vec3& axis, double angle) {
  const Vec3 a = axis.normalized();
  const double h = 0.5 * angle;
  const double s = std::sin(h);
  return Quaternion{std::cos(h), a.x() * s, a.y() * s, a.z() * s};
}

Quaternion Quaternion::exp(const Vec3& rotvec) {
  const double theta = rotvec.norm();
  if (theta < 1e-12) {
    return Quaternion{1.0, 0.5 * rotvec.x(), 0.5 * rotvec.y(), 0.5 * rotvec.z()}.normalized();
  }
  return from_axis_angle(rotvec / theta, theta);
}

Quaternion Quaternion::from_matrix(const Mat3& R) {
  Eigen::Quaterniond q(R);
  return Quaternion{q.w(), q.x(), q.y(), q.z()}.normalized();
}

double Quaternion::norm() const { return std::sqrt(squared_norm()); }

Quaternion Quaternion::normalized() const {
  const double n = norm();
  const double s = (w < 0.0 ? -1.0 : 1.0) / n;
  return {w * s, x * s, y * s, z * s};
}

Mat3 Quaternion::to_matrix() const {
  Mat3 R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

Vec3 Quaternion::rotate(const Vec3& v) const {
  // v + 2 q_v x (q_v x v + w v)
  const Vec3 qv(x, y, z);
  const Vec3 t = 2.0 * qv.cross(v);
  return v + w * t + qv.cross(t);
}

double Quaternion::angle() const {
  const double vn = std::sqrt(x * x + y * y + z * z);
  return 2.0 * std::atan2(vn, std::abs(w));
}

Quaternion quat_multiply(const Quaternion& a, const Quaternion& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

SE3 SE3::exp(const Eigen::Matrix<double, 6, 1>& twist) {
  return SE3{Quaternion::exp(twist.tail<3>()), twist.head<3>()};
}

SE3 SE3::inverse() const {
  const Quaternion rinv = rotation.conjugate();
  return SE3{rinv, -rinv.rotate(translation)};
}

SE3 compose(const SE3& a, const SE3& b) {
  return SE3{quat_multiply(a.rotation, b.rotation).normalized(), a.apply(b.translation)};
}

Vec3 se3_apply(const SE3& T, const Vec3& p) { return T.apply(p); }

SE3 Sim3::apply(const SE3& pose_c2w) const {
  return SE3{quat_multiply(rotation, pose_c2w.rotation).normalized(), apply(pose_c2w.translation)};
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw Error(ErrorKind::InvalidArgument, "focal lengths must be positive");
  if (width <= 0 || height <= 0) throw Error(ErrorKind::InvalidArgument, "image size must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw Error(ErrorKind::InvalidArgument, "principal point outside the image");
  }
}

CameraIntrinsics CameraIntrinsics::scaled(double factor) const {
  CameraIntrinsics k = *this;
  k.fx *= factor;
  k.fy *= factor;
  k.cx *= factor;
  k.cy *= factor;
  k.width = static_cast<int>(std::lround(width * factor));
  k.height = static_cast<int>(std::lround(height * factor));
  return k;
}

Vec2 project(const CameraIntrinsics& K, const Vec3& p_cam) {
  if (p_cam.z() <= kMinDepth) throw Error(ErrorKind::BehindCamera, "point at or behind the camera");
  const double iz = 1.0 / p_cam.z();
  return {K.fx * p_cam.x() * iz + K.cx, K.fy * p_cam.y() * iz + K.cy};
}

Vec3 unproject(const CameraIntrinsics& K, const Vec2& u, double depth) {
  if (!(depth > 0.0)) throw Error(ErrorKind::NonPositiveDepth, "depth must be positive");
  return {(u.x() - K.cx) / K.fx * depth, (u.y() - K.cy) / K.fy * depth, depth};
}

Mat23 projection_jacobian(const CameraIntrinsics& K, const Vec3& p_cam) {
  if (p_cam.z() <= kMinDepth) throw Error(ErrorKind::BehindCamera, "point at or behind the camera");
  const double iz = 1.0 / p_cam.z();
  const double iz2 = iz * iz;
  Mat23 J;
  J << K.fx * iz, 0.0, -K.fx * p_cam.x() * iz2,
       0.0, K.fy * iz, -K.fy * p_cam.y() * iz2;
  return J;
}

namespace {

Sim3 umeyama_impl(std::span<const Vec3> src, std::span<const Vec3> dst, bool strict) {
  if (src.size() != dst.size()) throw Error(ErrorKind::LengthMismatch, "point lists differ in length");
  const size_t n = src.size();
  if (n == 0 || (strict && n < 3)) {
    throw Error(ErrorKind::DegenerateConfiguration, "need at least 3 point pairs");
  }
  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (size_t i = 0; i < n; ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= static_cast<double>(n);
  mu_d /= static_cast<double>(n);

  Mat3 cov = Mat3::Zero();
  double var_s = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Vec3 ds = src[i] - mu_s;
    cov += (dst[i] - mu_d) * ds.transpose();
    var_s += ds.squaredNorm();
  }
  cov /= static_cast<double>(n);
  var_s /= static_cast<double>(n);

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (strict && (sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0])) {
    throw Error(ErrorKind::DegenerateConfiguration, "cross-covariance has rank < 2");
  }
  Mat3 S = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) S(2, 2) = -1.0;
  const Mat3 R = svd.matrixU() * S * svd.matrixV().transpose();
  double scale = 1.0;
  if (var_s > 1e-300) {
    const double c = (sv.asDiagonal() * S).trace() / var_s;
    if (c > 0.0) scale = c;
  }
  Sim3 out;
  out.scale = scale;
  out.rotation = Quaternion::from_matrix(R);
  out.translation = mu_d - scale * R * mu_s;
  return out;
}

}  // namespace

Sim3 umeyama_sim3(std::span<const Vec3> src, std::span<const Vec3> dst) {
  return umeyama_impl(src, dst, true);
}

std::vector<SE3> align_trajectory(std::span<const SE3> est, std::span<const SE3> gt) {
  if (est.size() != gt.size()) throw Error(ErrorKind::LengthMismatch, "trajectories differ in length");
  std::vector<Vec3> ps, pg;
  ps.reserve(est.size());
  pg.reserve(gt.size());
  for (size_t i = 0; i < est.size(); ++i) {
    ps.push_back(est[i].translation);
    pg.push_back(gt[i].translation);
  }
  // Straight-line trajectories are common; a rank-1 alignment is still
  // well defined for the positions, so the strict rank check is skipped.
  const Sim3 S = umeyama_impl(ps, pg, false);
  std::vector<SE3> aligned;
  aligned.reserve(est.size());
  for (const SE3& p : est) aligned.push_back(S.apply(p));
  return aligned;
}

TrajectoryMetrics trajectory_metrics(std::span<const SE3> est, std::span<const SE3> gt) {
  if (est.size() != gt.size()) throw Error(ErrorKind::LengthMismatch, "trajectories differ in length");
  if (est.size() < 2) throw Error(ErrorKind::LengthMismatch, "need at least two poses");
  const std::vector<SE3> aligned = align_trajectory(est, gt);
  const size_t n = est.size();

  TrajectoryMetrics m;
  double se = 0.0;
  for (size_t i = 0; i < n; ++i) se += (aligned[i].translation - gt[i].translation).squaredNorm();
  m.ate = std::sqrt(se / static_cast<double>(n));

  double st = 0.0, sr = 0.0;
  for (size_t i = 0; i + 1 < n; ++i) {
    const SE3 rel_est = aligned[i].inverse() * aligned[i + 1];
    const SE3 rel_gt = gt[i].inverse() * gt[i + 1];
    const SE3 err = rel_gt.inverse() * rel_est;
    st += err.translation.squaredNorm();
    const double deg = err.rotation.angle() * 180.0 / M_PI;
    sr += deg * deg;
  }
  m.rpe_trans = std::sqrt(st / static_cast<double>(n - 1));
  m.rpe_rot = std::sqrt(sr / static_cast<double>(n - 1));
  return m;
}

std::vector<StampedPose> read_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open trajectory " + path);
  std::vector<StampedPose> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    StampedPose sp;
    double v[8];
    int k = 0;
    while (k < 8 && ss >> v[k]) ++k;
    if (k == 0) continue;
    if (k != 8) {
      throw Error(ErrorKind::IoError, path + ":" + std::to_string(lineno) + ": expected 8 fields");
    }
    sp.t = v[0];
    sp.pose.translation = Vec3(v[1], v[2], v[3]);
    sp.pose.rotation = Quaternion{v[4], v[5], v[6], v[7]}.normalized();
    out.push_back(sp);
  }
  return out;
}

void write_trajectory(const std::string& path, std::span<const StampedPose> poses) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write trajectory " + path);
  out << std::setprecision(17);
  for (const StampedPose& sp : poses) {
    const Quaternion& q = sp.pose.rotation;
    const Vec3& t = sp.pose.translation;
    out << sp.t << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.w << ' ' << q.x << ' '
        << q.y << ' ' << q.z << '\n';
  }
}

Eigen::Matrix4d quat_left_matrix(const Quaternion& a) {
  Eigen::Matrix4d L;
  L << a.w, -a.x, -a.y, -a.z,
       a.x, a.w, -a.z, a.y,
       a.y, a.z, a.w, -a.x,
       a.z, -a.y, a.x, a.w;
  return L;
}

Eigen::Matrix4d quat_right_matrix(const Quaternion& b) {
  Eigen::Matrix4d R;
  R << b.w, -b.x, -b.y, -b.z,
       b.x, b.w, b.z, -b.y,
       b.y, -b.z, b.w, b.x,
       b.z, b.y, -b.x, b.w;
  return R;
}

namespace {

Mat3 rotation_partial(int c, const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 d;
  switch (c) {
    case 0: d << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0; break;
    case 1: d << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x; break;
    case 2: d << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y; break;
    default: d << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0; break;
  }
  return d;
}

}  // namespace

Vec4 rotation_matrix_vjp(const Mat3& dl_dR, const Vec4& q) {
  Vec4 g;
  for (int c = 0; c < 4; ++c) g[c] = dl_dR.cwiseProduct(rotation_partial(c, q)).sum();
  return g;
}

}  // namespace magsplat
