#include "magsplat/synthetic.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "magsplat/rasterizer.hpp"
#include "magsplat/rng.hpp"

namespace magsplat {

namespace {

struct Box {
  Vec3 center;
  Mat3 R = Mat3::Identity();
  Vec3 half;
  bool inside = false;  // the room is seen from within
  bool dynamic = false;
  int palette = 0;
};

constexpr double kInf = std::numeric_limits<double>::infinity();

Mat3 rot_y(double a) {
  Mat3 R;
  R << std::cos(a), 0.0, std::sin(a), 0.0, 1.0, 0.0, -std::sin(a), 0.0, std::cos(a);
  return R;
}

double ray_box(const Box& b, const Vec3& o, const Vec3& d) {
  const Vec3 ol = b.R.transpose() * (o - b.center);
  const Vec3 dl = b.R.transpose() * d;
  double tn = -kInf, tf = kInf;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dl[a]) < 1e-15) {
      if (std::abs(ol[a]) > b.half[a]) return kInf;
      continue;
    }
    double t0 = (-b.half[a] - ol[a]) / dl[a], t1 = (b.half[a] - ol[a]) / dl[a];
    if (t0 > t1) std::swap(t0, t1);
    tn = std::max(tn, t0);
    tf = std::min(tf, t1);
  }
  if (tn > tf) return kInf;
  if (b.inside) return tf > 0.0 ? tf : kInf;
  return tn > 1e-9 ? tn : kInf;
}

struct Hit {
  double t = kInf;
  bool dynamic = false;
};

Hit cast(const std::vector<Box>& boxes, const Vec3& o, const Vec3& d) {
  Hit h;
  for (const auto& b : boxes) {
    const double t = ray_box(b, o, d);
    if (t < h.t) h = {t, b.dynamic};
  }
  return h;
}

constexpr double kRoomMinZ = 1.5;

Vec3 texture(int palette, int face, double u, double v, bool fine) {
  static const Vec3 base[] = {{0.75, 0.70, 0.62}, {0.45, 0.55, 0.70}, {0.60, 0.72, 0.50},
                              {0.80, 0.55, 0.40}, {0.55, 0.45, 0.65}, {0.70, 0.65, 0.35}};
  const Vec3 c = base[(palette * 3 + face) % 6];
  const double period = fine ? 0.2 : 0.5;
  const bool check = (static_cast<long>(std::floor(u / period)) + static_cast<long>(std::floor(v / period))) % 2 == 0;
  const double stripe = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * (u + 0.7 * v) / (3.1 * period));
  const Vec3 col = c * (check ? 1.0 : 0.55) * (0.8 + 0.2 * stripe);
  return col.cwiseMax(0.02).cwiseMin(0.98);
}

// Surface points with z < min_z are skipped: the room walls reach behind the
// camera, and splats right in front of the lens would cover the whole image.
void sample_box(const Box& b, double spacing, GaussianScene& scene, double min_z = -1e300) {
  for (int a = 0; a < 3; ++a) {
    const int ua = (a + 1) % 3, va = (a + 2) % 3;
    for (int sign = -1; sign <= 1; sign += 2) {
      const int face = 2 * a + (sign > 0);
      const Vec3 fc = b.center + sign * b.half[a] * b.R.col(a);
      const Vec3 eu = b.R.col(ua), ev = b.R.col(va);
      const double lu = 2.0 * b.half[ua], lv = 2.0 * b.half[va];
      const int nu = std::max(1, static_cast<int>(std::lround(lu / spacing)));
      const int nv = std::max(1, static_cast<int>(std::lround(lv / spacing)));
      Mat3 F;
      F << eu, ev, eu.cross(ev);
      const Quaternion q = Quaternion::from_matrix(F);
      const Vec3 s(0.7 * lu / nu, 0.7 * lv / nv, 0.1 * std::min(lu / nu, lv / nv));
      for (int j = 0; j < nv; ++j) {
        for (int i = 0; i < nu; ++i) {
          const double u = (i + 0.5) / nu * lu, v = (j + 0.5) / nv * lv;
          GaussianPrimitive g;
          g.mu = fc + (u - 0.5 * lu) * eu + (v - 0.5 * lv) * ev;
          if (g.mu.z() < min_z) continue;
          g.q = q;
          g.s = s;
          g.opacity = 0.95;
          g.dynamic_label = b.dynamic;
          set_sh_from_rgb(g.sh, scene.sh_degree, texture(b.palette, face, u, v, b.dynamic));
          scene.primitives.push_back(std::move(g));
        }
      }
    }
  }
}

SE3 camera_pose(const SyntheticSceneSpec& spec, double s) {
  const Vec3 c(-0.5 * spec.camera_travel + spec.camera_travel * s, -0.1 * std::sin(std::numbers::pi * s), 0.3 * s);
  const Vec3 target(0.0, 0.3, 5.0);
  const Vec3 fwd = (target - c).normalized();
  const Vec3 right = Vec3(0.0, 1.0, 0.0).cross(fwd).normalized();
  const Vec3 down = fwd.cross(right);
  Mat3 R_c2w;
  R_c2w << right, down, fwd;
  return SE3{Quaternion::from_matrix(R_c2w), c}.inverse();
}

}  // namespace

void SyntheticSceneSpec::validate() const {
  if (frames < 2) throw Error(ErrorKind::ConfigError, "synthetic scene needs at least 2 frames");
  if (width < 8 || height < 8) throw Error(ErrorKind::ConfigError, "synthetic image must be at least 8x8");
  if (!(focal_ratio > 0.0) || !(surface_spacing > 0.0)) {
    throw Error(ErrorKind::ConfigError, "focal ratio and surface spacing must be positive");
  }
  if (!(object_half_extent.minCoeff() > 0.0)) throw Error(ErrorKind::ConfigError, "object extent must be positive");
  if (pointmap_noise < 0.0 || depth_noise < 0.0 || flow_noise < 0.0 || dyn_confidence_noise < 0.0) {
    throw Error(ErrorKind::ConfigError, "noise levels must be non-negative");
  }
}

SyntheticSequence generate_synthetic_scene(const SyntheticSceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int N = spec.frames, W = spec.width, H = spec.height;
  SyntheticSequence out;
  auto& obs = out.observations;
  obs.K = CameraIntrinsics{spec.focal_ratio * W, spec.focal_ratio * W, (W - 1) / 2.0, (H - 1) / 2.0, W, H};

  std::vector<Box> statics = {
      {Vec3(0.0, -0.25, 3.0), Mat3::Identity(), Vec3(3.0, 1.75, 4.0), true, false, 0},
      {Vec3(-1.2, 1.0, 4.5), Mat3::Identity(), Vec3(0.5, 0.5, 0.5), false, false, 1},
      {Vec3(1.3, 0.9, 5.2), rot_y(0.5), Vec3(0.4, 0.6, 0.4), false, false, 2},
  };
  const Box object0{spec.object_center, Mat3::Identity(), spec.object_half_extent, false, true, 3};

  out.scene.sh_degree = 0;
  // The camera path stays below z = 0.3 and no ray reaches the walls before z = 1.5.
  for (const auto& b : statics) sample_box(b, spec.surface_spacing, out.scene, b.inside ? kRoomMinZ : -1e300);
  if (spec.dynamic) sample_box(object0, 0.5 * spec.surface_spacing, out.scene);

  for (int t = 0; t < N; ++t) {
    const double s = static_cast<double>(t) / (N - 1);
    out.poses.push_back(camera_pose(spec, s));
    const Mat3 R = rot_y(spec.object_spin * s);
    const Vec3 c1 = spec.object_center + spec.object_travel * s;
    out.object_motion.push_back(SE3{Quaternion::from_matrix(R), c1 - R * spec.object_center});
  }

  auto boxes_at = [&](int t) {
    std::vector<Box> boxes = statics;
    if (spec.dynamic) {
      Box b = object0;
      b.center = out.object_motion[t].apply(object0.center);
      b.R = out.object_motion[t].rotation_matrix();
      boxes.push_back(b);
    }
    return boxes;
  };

  // Exact surface points per frame, in world coordinates at that frame's time.
  std::vector<std::vector<Vec3>> points(N);
  std::vector<std::vector<char>> dyn(N);
  for (int t = 0; t < N; ++t) {
    const auto boxes = boxes_at(t);
    const SE3 c2w = out.poses[t].inverse();
    const Mat3 Rc = c2w.rotation_matrix();
    points[t].resize(static_cast<size_t>(W) * H);
    dyn[t].resize(points[t].size());
    Mask mask(W, H, 1, 0);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const Vec3 ray_c = unproject(obs.K, Vec2(x, y), 1.0);
        const Vec3 d = Rc * ray_c;
        const Hit h = cast(boxes, c2w.translation, d);
        const size_t p = static_cast<size_t>(y) * W + x;
        points[t][p] = c2w.translation + h.t * d;
        dyn[t][p] = h.dynamic;
        mask.data[p] = h.dynamic ? 1 : 0;
      }
    }
    out.masks.push_back(std::move(mask));
  }

  auto noise_rng = make_stream(seed, "synthetic");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int t = 0; t < N; ++t) {
    FrameObservations f;
    RenderContext ctx{out.poses[t], obs.K, Vec3::Zero(), 1};
    f.image = render(scene_at_frame(out, t), ctx).image;
    f.pointmap = Image(W, H, 3, 0.0);
    f.confidence = Raster<double>(W, H, 1, 1.0);
    f.depth = Raster<double>(W, H, 1, 0.0);
    f.motion_mask = out.masks[t];
    f.initial_dyn_confidence = Raster<double>(W, H, 1, 0.0);
    for (size_t p = 0; p < points[t].size(); ++p) {
      const Vec3 X = points[t][p];
      for (int k = 0; k < 3; ++k) f.pointmap.data[3 * p + k] = X[k] + spec.pointmap_noise * gauss(noise_rng);
      f.depth.data[p] = out.poses[t].apply(X).z() + spec.depth_noise * gauss(noise_rng);
      // Partial motion evidence: half the object pixels score high.
      double c = dyn[t][p] ? (unif(noise_rng) < 0.5 ? 0.85 : 0.35) : 0.1;
      c += spec.dyn_confidence_noise * gauss(noise_rng);
      f.initial_dyn_confidence.data[p] = std::clamp(c, 0.0, 1.0);
    }
    obs.frames.push_back(std::move(f));
  }

  for (const auto& [i, j] : ba_edge_pairs(N)) {
    FlowField fl;
    fl.from = i;
    fl.to = j;
    fl.flow = Image(W, H, 2, 0.0);
    fl.confidence = Raster<double>(W, H, 1, 1.0);
    const SE3 carry = compose(out.object_motion[j], out.object_motion[i].inverse());
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const size_t p = static_cast<size_t>(y) * W + x;
        const Vec3 X = dyn[i][p] ? carry.apply(points[i][p]) : points[i][p];
        const Vec3 pc = out.poses[j].apply(X);
        if (pc.z() <= kMinDepth) {
          fl.confidence.data[p] = 0.0;
          continue;
        }
        const Vec2 u = project(obs.K, pc);
        fl.flow.at(x, y, 0) = u.x() - x + spec.flow_noise * gauss(noise_rng);
        fl.flow.at(x, y, 1) = u.y() - y + spec.flow_noise * gauss(noise_rng);
      }
    }
    obs.flows.push_back(std::move(fl));
  }
  return out;
}

GaussianScene scene_at_frame(const SyntheticSequence& seq, int t) {
  GaussianScene s = seq.scene;
  const SE3& M = seq.object_motion.at(t);
  for (auto& g : s.primitives) {
    if (!g.dynamic_label) continue;
    g.mu = M.apply(g.mu);
    g.q = (M.rotation * g.q).normalized();
  }
  return s;
}

double dynamic_coverage(const SyntheticSequence& seq) {
  double sum = 0.0;
  for (const auto& m : seq.masks) {
    size_t n = 0;
    for (auto v : m.data) n += v != 0;
    sum += static_cast<double>(n) / static_cast<double>(m.pixel_count());
  }
  return seq.masks.empty() ? 0.0 : sum / static_cast<double>(seq.masks.size());
}

}  // namespace magsplat
