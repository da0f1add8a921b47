#include "magsplat/deformation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "magsplat/binary_io.hpp"

namespace magsplat {

void ControlPointSet::validate() const {
  for (const auto& c : points) {
    if (!(c.radius > 0.0) || !c.p.allFinite()) {
      throw Error(ErrorKind::InvalidArgument, "control points need finite positions and positive radii");
    }
  }
}

void assign_control_radii(ControlPointSet& controls) {
  const size_t n = controls.size();
  if (n < 2) return;
  const size_t k = std::min<size_t>(3, n - 1);
  std::vector<double> radii(n);
  std::vector<double> d(n);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) d[j] = (controls.points[i].p - controls.points[j].p).norm();
    d[i] = std::numeric_limits<double>::infinity();
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    double mean = 0.0;
    for (size_t j = 0; j < k; ++j) mean += d[j];
    radii[i] = std::max(mean / static_cast<double>(k), 1e-6);
  }
  for (size_t i = 0; i < n; ++i) controls.points[i].radius = radii[i];
}

// ---------------------------------------------------------------------------
// Field

namespace {

constexpr int kHeadDim = 7;  // quaternion offset (4) + translation (3)

using MapMat = Eigen::Map<const Eigen::MatrixXd>;
using MapVec = Eigen::Map<const Eigen::VectorXd>;

}  // namespace

DeformationField::DeformationField(const FieldConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.pos_freqs < 0 || cfg.time_freqs < 0 || cfg.hidden_layers < 1 || cfg.hidden_width < 1) {
    throw Error(ErrorKind::InvalidArgument, "invalid field configuration");
  }
  size_t total = 0;
  const auto shapes = layer_shapes();
  for (const auto& [r, c] : shapes) total += static_cast<size_t>(r) * c + r;
  params_.assign(total, 0.0);

  std::mt19937_64 rng(seed);
  size_t off = 0;
  for (size_t l = 0; l < shapes.size(); ++l) {
    const auto [rows, cols] = shapes[l];
    const size_t nw = static_cast<size_t>(rows) * cols;
    if (l + 1 < shapes.size()) {
      std::uniform_real_distribution<double> u(-std::sqrt(6.0 / cols), std::sqrt(6.0 / cols));
      for (size_t i = 0; i < nw; ++i) params_[off + i] = u(rng);
    }
    off += nw + rows;
  }
}

void DeformationField::set_normalization(const Vec3& center, double inv_extent) {
  if (!(inv_extent > 0.0)) throw Error(ErrorKind::InvalidArgument, "field normalization must be positive");
  center_ = center;
  inv_extent_ = inv_extent;
}

int DeformationField::input_dim() const { return 3 + 6 * cfg_.pos_freqs + 1 + 2 * cfg_.time_freqs; }

std::vector<std::pair<int, int>> DeformationField::layer_shapes() const {
  std::vector<std::pair<int, int>> s;
  s.emplace_back(cfg_.hidden_width, input_dim());
  for (int l = 1; l < cfg_.hidden_layers; ++l) s.emplace_back(cfg_.hidden_width, cfg_.hidden_width);
  s.emplace_back(kHeadDim, cfg_.hidden_width);
  return s;
}

Eigen::MatrixXd DeformationField::encode_inputs(std::span<const Vec3> points, double t) const {
  const int n = static_cast<int>(points.size());
  Eigen::MatrixXd X(input_dim(), n);
  for (int i = 0; i < n; ++i) {
    const Vec3 pn = (points[i] - center_) * inv_extent_;
    int r = 0;
    for (int c = 0; c < 3; ++c) X(r++, i) = pn[c];
    for (int f = 0; f < cfg_.pos_freqs; ++f) {
      const double w = std::ldexp(M_PI, f);
      for (int c = 0; c < 3; ++c) {
        X(r++, i) = std::sin(w * pn[c]);
        X(r++, i) = std::cos(w * pn[c]);
      }
    }
    X(r++, i) = t;
    for (int f = 0; f < cfg_.time_freqs; ++f) {
      const double w = std::ldexp(M_PI, f);
      X(r++, i) = std::sin(w * t);
      X(r++, i) = std::cos(w * t);
    }
  }
  return X;
}

SE3 DeformationField::transform_from_head(const Eigen::Ref<const Eigen::VectorXd>& h) {
  Vec4 u(1.0 + h[0], h[1], h[2], h[3]);
  const double n = u.norm();
  SE3 T;
  if (n > 1e-12) T.rotation = Quaternion::from_coeffs(u / n);
  T.translation = h.segment<3>(4);
  return T;
}

std::vector<SE3> DeformationField::evaluate(std::span<const Vec3> points, double t, FieldTape* tape) const {
  const auto shapes = layer_shapes();
  Eigen::MatrixXd A = encode_inputs(points, t);
  if (tape) {
    tape->t = t;
    tape->activations.clear();
    tape->activations.push_back(A);
  }
  size_t off = 0;
  Eigen::MatrixXd H;
  for (size_t l = 0; l < shapes.size(); ++l) {
    const auto [rows, cols] = shapes[l];
    MapMat W(params_.data() + off, rows, cols);
    MapVec b(params_.data() + off + static_cast<size_t>(rows) * cols, rows);
    off += static_cast<size_t>(rows) * cols + rows;
    Eigen::MatrixXd Z = W * A;
    Z.colwise() += b;
    if (l + 1 < shapes.size()) {
      A = Z.cwiseMax(0.0);
      if (tape) tape->activations.push_back(A);
    } else {
      H = std::move(Z);
    }
  }
  std::vector<SE3> out(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    Eigen::VectorXd h = H.col(static_cast<Eigen::Index>(i));
    h.segment<3>(4) /= inv_extent_;
    out[i] = transform_from_head(h);
  }
  if (tape) tape->head = std::move(H);
  return out;
}

SE3 DeformationField::query(const Vec3& p, double t) const {
  const Vec3 pts[1] = {p};
  return evaluate(pts, t).front();
}

void DeformationField::backward(const FieldTape& tape, std::span<const Vec4> d_rotation,
                                std::span<const Vec3> d_translation, std::vector<double>& grad) const {
  const auto shapes = layer_shapes();
  const Eigen::Index n = tape.head.cols();
  if (static_cast<Eigen::Index>(d_rotation.size()) != n || static_cast<Eigen::Index>(d_translation.size()) != n) {
    throw Error(ErrorKind::LengthMismatch, "field backward: gradient count does not match the tape");
  }
  if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);

  Eigen::MatrixXd dZ(kHeadDim, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec4 u(1.0 + tape.head(0, i), tape.head(1, i), tape.head(2, i), tape.head(3, i));
    const double un = u.norm();
    Vec4 du = Vec4::Zero();
    if (un > 1e-12) {
      const Vec4 r = u / un;
      const Vec4& g = d_rotation[i];
      du = (g - r * r.dot(g)) / un;
    }
    dZ.block<4, 1>(0, i) = du;
    dZ.block<3, 1>(4, i) = d_translation[i] / inv_extent_;
  }

  std::vector<size_t> offsets(shapes.size());
  size_t off = 0;
  for (size_t l = 0; l < shapes.size(); ++l) {
    offsets[l] = off;
    off += static_cast<size_t>(shapes[l].first) * shapes[l].second + shapes[l].first;
  }
  for (size_t l = shapes.size(); l-- > 0;) {
    const auto [rows, cols] = shapes[l];
    const Eigen::MatrixXd& Ain = tape.activations[l];
    Eigen::Map<Eigen::MatrixXd> dW(grad.data() + offsets[l], rows, cols);
    Eigen::Map<Eigen::VectorXd> db(grad.data() + offsets[l] + static_cast<size_t>(rows) * cols, rows);
    dW.noalias() += dZ * Ain.transpose();
    db += dZ.rowwise().sum();
    if (l == 0) break;
    MapMat W(params_.data() + offsets[l], rows, cols);
    Eigen::MatrixXd dA = W.transpose() * dZ;
    dZ = dA.cwiseProduct((Ain.array() > 0.0).cast<double>().matrix());
  }
}

namespace {

constexpr std::uint32_t kDtypeF32 = 0;
constexpr std::uint32_t kDtypeF64 = 1;

}  // namespace

std::vector<std::uint8_t> DeformationField::encode(bool double_precision) const {
  ByteWriter w;
  w.magic("FLD1");
  w.put<std::uint32_t>(double_precision ? kDtypeF64 : kDtypeF32);
  w.put<std::uint32_t>(cfg_.pos_freqs);
  w.put<std::uint32_t>(cfg_.time_freqs);
  w.put<std::uint32_t>(cfg_.hidden_layers);
  w.put<std::uint32_t>(cfg_.hidden_width);
  for (int c = 0; c < 3; ++c) w.put<double>(center_[c]);
  w.put<double>(inv_extent_);
  const auto shapes = layer_shapes();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(shapes.size()));
  for (const auto& [r, c] : shapes) {
    w.put<std::uint32_t>(r);
    w.put<std::uint32_t>(c);
  }
  if (double_precision) {
    w.put_span<double>(params_);
  } else {
    for (double v : params_) w.put<float>(static_cast<float>(v));
  }
  return w.take();
}

DeformationField DeformationField::decode(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("FLD1");
  const auto dtype = r.get<std::uint32_t>();
  if (dtype != kDtypeF32 && dtype != kDtypeF64) throw Error(ErrorKind::IoError, "unknown field dtype");
  FieldConfig cfg;
  cfg.pos_freqs = static_cast<int>(r.get<std::uint32_t>());
  cfg.time_freqs = static_cast<int>(r.get<std::uint32_t>());
  cfg.hidden_layers = static_cast<int>(r.get<std::uint32_t>());
  cfg.hidden_width = static_cast<int>(r.get<std::uint32_t>());
  if (cfg.pos_freqs > 64 || cfg.time_freqs > 64 || cfg.hidden_layers < 1 || cfg.hidden_layers > 64 ||
      cfg.hidden_width < 1 || cfg.hidden_width > 65536) {
    throw Error(ErrorKind::IoError, "implausible field header");
  }
  DeformationField f;
  f.cfg_ = cfg;
  Vec3 center;
  for (int c = 0; c < 3; ++c) center[c] = r.get<double>();
  f.center_ = center;
  f.inv_extent_ = r.get<double>();
  const auto expected = f.layer_shapes();
  if (r.get<std::uint32_t>() != expected.size()) throw Error(ErrorKind::IoError, "field layer count mismatch");
  size_t total = 0;
  for (const auto& [rows, cols] : expected) {
    if (r.get<std::uint32_t>() != static_cast<std::uint32_t>(rows) ||
        r.get<std::uint32_t>() != static_cast<std::uint32_t>(cols)) {
      throw Error(ErrorKind::IoError, "field layer shape mismatch");
    }
    total += static_cast<size_t>(rows) * cols + rows;
  }
  f.params_.assign(total, 0.0);
  if (dtype == kDtypeF64) {
    r.get_into<double>(f.params_);
  } else {
    for (double& v : f.params_) v = r.get<float>();
  }
  if (r.remaining() != 0) throw Error(ErrorKind::IoError, "trailing bytes after field payload");
  return f;
}

void write_field(const DeformationField& field, const std::string& path) {
  write_file_bytes(path, field.encode(false));
}

DeformationField read_field(const std::string& path) { return DeformationField::decode(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_controls(const ControlPointSet& controls) {
  ByteWriter w;
  w.magic("CTL1");
  w.put<std::uint64_t>(controls.size());
  for (const auto& c : controls.points) {
    for (int k = 0; k < 3; ++k) w.put<double>(c.p[k]);
    w.put<double>(c.radius);
  }
  return w.take();
}

ControlPointSet decode_controls(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("CTL1");
  const auto n = r.get<std::uint64_t>();
  if (n > r.remaining() / 32) throw Error(ErrorKind::TruncatedPayload, "control set shorter than its header");
  ControlPointSet out;
  out.points.resize(n);
  for (auto& c : out.points) {
    for (int k = 0; k < 3; ++k) c.p[k] = r.get<double>();
    c.radius = r.get<double>();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Skinning

NeighborList lbs_weights(const Vec3& mu, const ControlPointSet& controls, int K) {
  if (controls.empty()) throw Error(ErrorKind::EmptyControlSet, "no control points");
  if (K < 1) throw Error(ErrorKind::InvalidArgument, "K must be at least 1");
  const size_t n = controls.size();
  const size_t k = std::min<size_t>(static_cast<size_t>(K), n);
  std::vector<std::pair<double, std::int32_t>> d(n);
  for (size_t i = 0; i < n; ++i) d[i] = {(mu - controls.points[i].p).squaredNorm(), static_cast<std::int32_t>(i)};
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());

  NeighborList out(k);
  double emin = std::numeric_limits<double>::infinity();
  std::vector<double> e(k);
  for (size_t i = 0; i < k; ++i) {
    const double r = controls.points[d[i].second].radius;
    e[i] = d[i].first / (2.0 * r * r);
    emin = std::min(emin, e[i]);
  }
  // Normalize relative to the closest kernel so far-away Gaussians whose raw
  // kernels underflow still get well-defined weights.
  double sum = 0.0;
  for (size_t i = 0; i < k; ++i) sum += std::exp(-(e[i] - emin));
  for (size_t i = 0; i < k; ++i) {
    out[i].index = d[i].second;
    out[i].kernel = std::exp(-e[i]);
    out[i].weight = std::exp(-(e[i] - emin)) / sum;
  }
  return out;
}

NeighborWeights compute_neighbor_weights(const GaussianScene& scene, const ControlPointSet& controls, int K) {
  NeighborWeights w;
  w.lists.resize(scene.size());
  for (size_t j = 0; j < scene.size(); ++j) {
    if (scene.primitives[j].dynamic_label) w.lists[j] = lbs_weights(scene.primitives[j].mu, controls, K);
  }
  return w;
}

ControlTransforms control_transforms(const DeformationField& field, const ControlPointSet& controls, double t,
                                     FieldTape* tape) {
  std::vector<Vec3> pts(controls.size());
  for (size_t k = 0; k < controls.size(); ++k) pts[k] = controls.points[k].p;
  return field.evaluate(pts, t, tape);
}

Vec3 warp_position(const GaussianPrimitive& g, const NeighborList& weights, const ControlPointSet& controls,
                   const ControlTransforms& transforms) {
  if (!g.dynamic_label) return g.mu;
  // sum_k w_k (R_k (mu - p_k) + p_k + T_k) written as an offset from mu, so
  // identity transforms reproduce mu exactly.
  Vec3 offset = Vec3::Zero();
  for (const auto& nb : weights) {
    const Vec3 d = g.mu - controls.points[nb.index].p;
    const SE3& T = transforms[nb.index];
    offset += nb.weight * (T.rotation.rotate(d) - d + T.translation);
  }
  return g.mu + offset;
}

Vec3 warp_position(const GaussianPrimitive& g, const NeighborList& weights, const ControlPointSet& controls,
                   const DeformationField& field, double t) {
  if (!g.dynamic_label) return g.mu;
  ControlTransforms transforms(controls.size());
  for (const auto& nb : weights) transforms[nb.index] = field.query(controls.points[nb.index].p, t);
  return warp_position(g, weights, controls, transforms);
}

Vec4 blend_rotations(const NeighborList& weights, const ControlTransforms& transforms) {
  Vec4 sum = Vec4::Zero();
  if (weights.empty()) return sum;
  const Vec4 ref = transforms[weights.front().index].rotation.coeffs();
  for (const auto& nb : weights) {
    const Vec4 r = transforms[nb.index].rotation.coeffs();
    sum += (r.dot(ref) < 0.0 ? -nb.weight : nb.weight) * r;
  }
  return sum;
}

namespace {

Quaternion normalize_plain(const Vec4& m) {
  return Quaternion::from_coeffs(m / m.norm());
}

Vec4 checked_blend(const NeighborList& weights, const ControlTransforms& transforms) {
  const Vec4 rbar = blend_rotations(weights, transforms);
  if (rbar.norm() < 1e-9) throw Error(ErrorKind::ZeroBlend, "blended rotation has vanishing norm");
  return rbar;
}

}  // namespace

Quaternion warp_orientation(const Quaternion& q, const NeighborList& weights, const ControlTransforms& transforms) {
  const Vec4 rbar = checked_blend(weights, transforms);
  return normalize_plain(quat_right_matrix(q) * rbar);
}

Quaternion warp_orientation(const Quaternion& q, const NeighborList& weights, const ControlPointSet& controls,
                            const DeformationField& field, double t) {
  ControlTransforms transforms(controls.size());
  for (const auto& nb : weights) transforms[nb.index] = field.query(controls.points[nb.index].p, t);
  return warp_orientation(q, weights, transforms);
}

GaussianScene warp_scene(const GaussianScene& canonical, const NeighborWeights& weights,
                         const ControlPointSet& controls, const ControlTransforms& transforms) {
  if (weights.size() != canonical.size()) {
    throw Error(ErrorKind::LengthMismatch, "neighbor weights do not match the scene");
  }
  GaussianScene out = canonical;
  for (size_t j = 0; j < canonical.size(); ++j) {
    const auto& g = canonical.primitives[j];
    if (!g.dynamic_label) continue;
    out.primitives[j].mu = warp_position(g, weights.lists[j], controls, transforms);
    out.primitives[j].q = warp_orientation(g.q, weights.lists[j], transforms);
  }
  return out;
}

GradientBuffers pull_back_detached(const GaussianScene& canonical, const GaussianScene& warped,
                                   const NeighborWeights& weights, const ControlTransforms& transforms,
                                   const GradientBuffers& warped_grads) {
  GradientBuffers out = warped_grads;
  for (size_t j = 0; j < canonical.size(); ++j) {
    const auto& g = canonical.primitives[j];
    if (!g.dynamic_label) continue;
    Mat3 A = Mat3::Zero();
    for (const auto& nb : weights.lists[j]) A += nb.weight * transforms[nb.index].rotation_matrix();
    out.d_mu[j] = A.transpose() * warped_grads.d_mu[j];

    const Quaternion rbar = Quaternion::from_coeffs(blend_rotations(weights.lists[j], transforms));
    const Vec4 m = quat_left_matrix(rbar) * g.q.coeffs();
    const Vec4 qp = warped.primitives[j].q.coeffs();
    const Vec4& gq = warped_grads.d_q[j];
    const Vec4 dm = (gq - qp * qp.dot(gq)) / m.norm();
    out.d_q[j] = quat_left_matrix(rbar).transpose() * dm;
  }
  return out;
}

TransformGradients transform_gradients(const GaussianScene& canonical, const NeighborWeights& weights,
                                       const ControlPointSet& controls, const ControlTransforms& transforms,
                                       const GradientBuffers& warped_grads) {
  const size_t nc = controls.size();
  TransformGradients out;
  out.d_rotation.assign(nc, Vec4::Zero());
  out.d_translation.assign(nc, Vec3::Zero());
  std::vector<Mat3> dR(nc, Mat3::Zero());
  for (size_t j = 0; j < canonical.size(); ++j) {
    const auto& g = canonical.primitives[j];
    if (!g.dynamic_label) continue;
    const auto& nbs = weights.lists[j];
    const Vec3& gmu = warped_grads.d_mu[j];
    for (const auto& nb : nbs) {
      out.d_translation[nb.index] += nb.weight * gmu;
      dR[nb.index] += nb.weight * gmu * (g.mu - controls.points[nb.index].p).transpose();
    }

    const Vec4 rbar = blend_rotations(nbs, transforms);
    const Vec4 m = quat_right_matrix(g.q) * rbar;
    const double mn = m.norm();
    if (mn < 1e-12) continue;
    const Vec4 qp = m / mn;
    const Vec4& gq = warped_grads.d_q[j];
    const Vec4 d_rbar = quat_right_matrix(g.q).transpose() * ((gq - qp * qp.dot(gq)) / mn);
    const Vec4 ref = transforms[nbs.front().index].rotation.coeffs();
    for (const auto& nb : nbs) {
      const Vec4 r = transforms[nb.index].rotation.coeffs();
      out.d_rotation[nb.index] += (r.dot(ref) < 0.0 ? -nb.weight : nb.weight) * d_rbar;
    }
  }
  for (size_t k = 0; k < nc; ++k) {
    out.d_rotation[k] += rotation_matrix_vjp(dR[k], transforms[k].rotation.coeffs());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Densification

void ControlImpact::reset(size_t controls, size_t gaussians) {
  g.assign(controls, 0.0);
  gaussian_energy.assign(gaussians, 0.0);
}

void accumulate_point_impact(const GradientBuffers& grads, const NeighborWeights& weights,
                             const GaussianScene& scene, ControlImpact& impact) {
  if (grads.size() != weights.size() || grads.size() != scene.size()) {
    throw Error(ErrorKind::LengthMismatch, "impact: gradients, weights and scene disagree in length");
  }
  if (impact.gaussian_energy.size() != scene.size()) impact.gaussian_energy.assign(scene.size(), 0.0);
  for (size_t j = 0; j < scene.size(); ++j) {
    if (!scene.primitives[j].dynamic_label) continue;
    const double e = grads.d_mu[j].squaredNorm();
    impact.gaussian_energy[j] += e;
    for (const auto& nb : weights.lists[j]) {
      if (static_cast<size_t>(nb.index) >= impact.g.size()) impact.g.resize(nb.index + 1, 0.0);
      impact.g[nb.index] += nb.kernel * e;
    }
  }
}

ControlImpact accumulate_point_impact(const GradientBuffers& grads, const NeighborWeights& weights,
                                      const GaussianScene& scene) {
  ControlImpact impact;
  impact.reset(0, scene.size());
  accumulate_point_impact(grads, weights, scene, impact);
  return impact;
}

ControlPointSet densify_control_points(const ControlPointSet& controls, const ControlImpact& impact,
                                       double threshold, const NeighborWeights& weights,
                                       const GaussianScene& scene, size_t max_count) {
  const size_t nc = controls.size();
  std::vector<double> wsum(nc, 0.0);
  std::vector<Vec3> psum(nc, Vec3::Zero());
  for (size_t j = 0; j < scene.size() && j < weights.size(); ++j) {
    if (!scene.primitives[j].dynamic_label) continue;
    const double e = j < impact.gaussian_energy.size() ? impact.gaussian_energy[j] : 0.0;
    if (e <= 0.0) continue;
    for (const auto& nb : weights.lists[j]) {
      wsum[nb.index] += nb.kernel * e;
      psum[nb.index] += nb.kernel * e * scene.primitives[j].mu;
    }
  }
  std::vector<size_t> triggered;
  for (size_t k = 0; k < nc && k < impact.g.size(); ++k) {
    if (impact.g[k] > threshold && wsum[k] > 0.0) triggered.push_back(k);
  }
  const size_t room = max_count > nc ? max_count - nc : 0;
  if (triggered.size() > room) {
    std::stable_sort(triggered.begin(), triggered.end(),
                     [&](size_t a, size_t b) { return impact.g[a] > impact.g[b]; });
    triggered.resize(room);
    std::sort(triggered.begin(), triggered.end());
  }
  ControlPointSet out = controls;
  for (size_t k : triggered) out.points.push_back({psum[k] / wsum[k], controls.points[k].radius});
  return out;
}

}  // namespace magsplat
