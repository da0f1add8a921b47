#include "magsplat/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/Dense>

#include "magsplat/binary_io.hpp"

namespace magsplat {

void GaussianScene::validate() const {
  if (sh_degree < 0 || sh_degree > kMaxShDegree) {
    throw Error(ErrorKind::InvalidArgument, "sh_degree must be in 0..3");
  }
  const size_t ncoef = 3 * static_cast<size_t>(sh_coeff_count(sh_degree));
  for (const GaussianPrimitive& g : primitives) {
    if (!(g.s.minCoeff() > 0.0)) throw Error(ErrorKind::NonPositiveScale, "scale must be positive");
    if (!(g.opacity >= 0.0 && g.opacity <= 1.0)) {
      throw Error(ErrorKind::InvalidArgument, "opacity outside [0,1]");
    }
    if (g.sh.size() != ncoef) throw Error(ErrorKind::InvalidArgument, "SH length does not match degree");
  }
}

Mat3 assemble_covariance(const Quaternion& q, const Vec3& s) {
  if (!(s.minCoeff() > 0.0)) throw Error(ErrorKind::NonPositiveScale, "scale must be positive");
  const Mat3 R = q.normalized().to_matrix();
  const Mat3 M = R * s.asDiagonal();
  return M * M.transpose();
}

namespace {

// Forward-mode dual number over the three view-direction components.
struct Dual3 {
  double v = 0.0;
  Vec3 d = Vec3::Zero();
};

inline Dual3 operator+(const Dual3& a, const Dual3& b) { return {a.v + b.v, a.d + b.d}; }
inline Dual3 operator-(const Dual3& a, const Dual3& b) { return {a.v - b.v, a.d - b.d}; }
inline Dual3 operator*(const Dual3& a, const Dual3& b) { return {a.v * b.v, a.d * b.v + b.d * a.v}; }
inline Dual3 operator*(double s, const Dual3& a) { return {s * a.v, s * a.d}; }
inline double value_of(double x) { return x; }
inline double value_of(const Dual3& x) { return x.v; }

constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                           0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                           -0.5900435899266435};

template <typename T>
void basis_impl(int degree, const T& x, const T& y, const T& z, std::array<T, 16>& out) {
  T one{};
  if constexpr (std::is_same_v<T, double>) {
    one = 1.0;
  } else {
    one.v = 1.0;
  }
  out[0] = kC0 * one;
  if (degree < 1) return;
  out[1] = -kC1 * y;
  out[2] = kC1 * z;
  out[3] = -kC1 * x;
  if (degree < 2) return;
  const T xx = x * x, yy = y * y, zz = z * z;
  const T xy = x * y, yz = y * z, xz = x * z;
  out[4] = kC2[0] * xy;
  out[5] = kC2[1] * yz;
  out[6] = kC2[2] * (2.0 * zz - xx - yy);
  out[7] = kC2[3] * xz;
  out[8] = kC2[4] * (xx - yy);
  if (degree < 3) return;
  out[9] = kC3[0] * y * (3.0 * xx - yy);
  out[10] = kC3[1] * xy * z;
  out[11] = kC3[2] * y * (4.0 * zz - xx - yy);
  out[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
  out[13] = kC3[4] * x * (4.0 * zz - xx - yy);
  out[14] = kC3[5] * z * (xx - yy);
  out[15] = kC3[6] * x * (xx - 3.0 * yy);
}

void check_degree(int degree) {
  if (degree < 0 || degree > kMaxShDegree) throw Error(ErrorKind::InvalidArgument, "SH degree must be 0..3");
}

}  // namespace

ShBasis sh_basis(int degree, const Vec3& v) {
  check_degree(degree);
  ShBasis out{};
  basis_impl<double>(degree, v.x(), v.y(), v.z(), out);
  return out;
}

void sh_basis_with_gradient(int degree, const Vec3& v, ShBasis& basis, std::array<Vec3, 16>& dbasis) {
  check_degree(degree);
  std::array<Dual3, 16> out{};
  Dual3 x{v.x(), Vec3::UnitX()}, y{v.y(), Vec3::UnitY()}, z{v.z(), Vec3::UnitZ()};
  basis_impl<Dual3>(degree, x, y, z, out);
  for (int k = 0; k < 16; ++k) {
    basis[k] = out[k].v;
    dbasis[k] = out[k].d;
  }
}

Vec3 eval_sh_raw(std::span<const double> sh, int degree, const Vec3& v) {
  const int n = sh_coeff_count(degree);
  if (sh.size() < static_cast<size_t>(3 * n)) throw Error(ErrorKind::InvalidArgument, "SH array too short");
  const ShBasis b = sh_basis(degree, v);
  Vec3 c = Vec3::Zero();
  for (int k = 0; k < n; ++k) {
    for (int ch = 0; ch < 3; ++ch) c[ch] += b[k] * sh[k * 3 + ch];
  }
  return c;
}

Vec3 eval_sh(std::span<const double> sh, int degree, const Vec3& v) {
  Vec3 c = eval_sh_raw(sh, degree, v);
  for (int ch = 0; ch < 3; ++ch) c[ch] = std::clamp(c[ch] + kShDcOffset, 0.0, 1.0);
  return c;
}

void set_sh_from_rgb(std::vector<double>& sh, int degree, const Vec3& rgb) {
  sh.assign(3 * static_cast<size_t>(sh_coeff_count(degree)), 0.0);
  for (int ch = 0; ch < 3; ++ch) sh[ch] = (rgb[ch] - kShDcOffset) / kC0;
}

std::optional<SplattedGaussian> project_gaussian(const GaussianPrimitive& g, int sh_degree,
                                                 const SE3& world_to_cam,
                                                 const CameraIntrinsics& K) {
  const Vec3 pc = world_to_cam.apply(g.mu);
  if (pc.z() <= kMinDepth) return std::nullopt;
  const Mat3 W = world_to_cam.rotation_matrix();
  const Mat23 J = projection_jacobian(K, pc);
  const Mat3 cov = assemble_covariance(g.q, g.s);
  const Mat23 JW = J * W;

  SplattedGaussian sg;
  sg.mu2d = project(K, pc);
  sg.sigma2d = JW * cov * JW.transpose();
  sg.sigma2d(0, 1) = sg.sigma2d(1, 0) = 0.5 * (sg.sigma2d(0, 1) + sg.sigma2d(1, 0));
  sg.sigma2d(0, 0) += kLowPassDilation;
  sg.sigma2d(1, 1) += kLowPassDilation;
  sg.depth = pc.z();
  sg.opacity = g.opacity;

  const double a = sg.sigma2d(0, 0), b = sg.sigma2d(0, 1), c = sg.sigma2d(1, 1);
  const double mid = 0.5 * (a + c);
  const double lmax = mid + std::sqrt(std::max(0.0, mid * mid - (a * c - b * b)));
  sg.radius = kFootprintSigmas * std::sqrt(lmax);
  if (sg.mu2d.x() + sg.radius < 0.0 || sg.mu2d.x() - sg.radius > K.width - 1 ||
      sg.mu2d.y() + sg.radius < 0.0 || sg.mu2d.y() - sg.radius > K.height - 1) {
    return std::nullopt;
  }

  const Vec3 center = world_to_cam.inverse().translation;
  const Vec3 dir = (g.mu - center).normalized();
  sg.view_color = eval_sh(g.sh, sh_degree, dir);
  return sg;
}

double eval_alpha(const SplattedGaussian& sg, const Vec2& pixel) {
  const double det = sg.sigma2d.determinant();
  if (det <= 1e-12) throw Error(ErrorKind::SingularCovariance, "2D covariance is singular");
  const Vec2 d = pixel - sg.mu2d;
  const double a = sg.sigma2d(0, 0), b = sg.sigma2d(0, 1), c = sg.sigma2d(1, 1);
  // inverse = [c -b; -b a] / det
  const double maha = (c * d.x() * d.x() - 2.0 * b * d.x() * d.y() + a * d.y() * d.y()) / det;
  return std::min(kAlphaMax, sg.opacity * std::exp(-0.5 * maha));
}

std::vector<std::uint8_t> encode_scene(const GaussianScene& scene) {
  scene.validate();
  ByteWriter w;
  w.magic("MGS1");
  w.put<std::uint64_t>(scene.primitives.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(scene.sh_degree));
  for (const GaussianPrimitive& g : scene.primitives) {
    for (int i = 0; i < 3; ++i) w.put<double>(g.mu[i]);
    w.put<double>(g.q.w);
    w.put<double>(g.q.x);
    w.put<double>(g.q.y);
    w.put<double>(g.q.z);
    for (int i = 0; i < 3; ++i) w.put<double>(g.s[i]);
    w.put<double>(g.opacity);
    w.put_span<double>(g.sh);
    w.put<std::uint8_t>(g.dynamic_label ? 1 : 0);
  }
  return w.take();
}

GaussianScene decode_scene(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("MGS1");
  const auto count = r.get<std::uint64_t>();
  GaussianScene scene;
  scene.sh_degree = static_cast<int>(r.get<std::uint32_t>());
  check_degree(scene.sh_degree);
  const size_t ncoef = 3 * static_cast<size_t>(sh_coeff_count(scene.sh_degree));
  const size_t record = (3 + 4 + 3 + 1 + ncoef) * sizeof(double) + 1;
  if (count > r.remaining() / record) throw Error(ErrorKind::TruncatedPayload, "scene payload too short");
  scene.primitives.resize(count);
  for (GaussianPrimitive& g : scene.primitives) {
    for (int i = 0; i < 3; ++i) g.mu[i] = r.get<double>();
    g.q.w = r.get<double>();
    g.q.x = r.get<double>();
    g.q.y = r.get<double>();
    g.q.z = r.get<double>();
    for (int i = 0; i < 3; ++i) g.s[i] = r.get<double>();
    g.opacity = r.get<double>();
    g.sh.resize(ncoef);
    r.get_into<double>(g.sh);
    g.dynamic_label = r.get<std::uint8_t>() != 0;
  }
  return scene;
}

void write_scene(const std::string& path, const GaussianScene& scene) {
  write_file_bytes(path, encode_scene(scene));
}

GaussianScene read_scene(const std::string& path) { return decode_scene(read_file_bytes(path)); }

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "short write to " + path);
}

}  // namespace magsplat
