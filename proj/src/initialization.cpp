#include "magsplat/initialization.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_map>

#include "magsplat/rng.hpp"

namespace magsplat {

namespace {

constexpr double kMinScale = 1e-4;

struct CellKey {
  long x, y, z;
  bool operator==(const CellKey&) const = default;
};
struct CellHash {
  size_t operator()(const CellKey& k) const {
    return static_cast<size_t>(k.x * 73856093L ^ k.y * 19349663L ^ k.z * 83492791L);
  }
};

}  // namespace

BoundingBox scene_bounds(const GaussianScene& scene) {
  if (scene.primitives.empty()) return {};
  BoundingBox b{scene.primitives[0].mu, scene.primitives[0].mu};
  for (const auto& g : scene.primitives) {
    b.lo = b.lo.cwiseMin(g.mu);
    b.hi = b.hi.cwiseMax(g.mu);
  }
  return b;
}

std::vector<double> mean_knn_distance(std::span<const Vec3> pts, int k) {
  const size_t n = pts.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  k = std::min<int>(k, static_cast<int>(n) - 1);
  Vec3 lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  // Cell size aimed at a handful of points per cell.
  const Vec3 ext = (hi - lo).cwiseMax(1e-9);
  double cell = std::cbrt(ext.prod() * 8.0 / static_cast<double>(n));
  cell = std::max(cell, ext.maxCoeff() / 256.0);
  auto key = [&](const Vec3& p) {
    return CellKey{static_cast<long>(std::floor((p.x() - lo.x()) / cell)),
                   static_cast<long>(std::floor((p.y() - lo.y()) / cell)),
                   static_cast<long>(std::floor((p.z() - lo.z()) / cell))};
  };
  std::unordered_map<CellKey, std::vector<int>, CellHash> grid;
  for (size_t i = 0; i < n; ++i) grid[key(pts[i])].push_back(static_cast<int>(i));

  std::vector<double> best;
  for (size_t i = 0; i < n; ++i) {
    const CellKey c = key(pts[i]);
    // Grow the search shell until the k-th neighbor lies inside the radius
    // the shell is guaranteed to cover; isolated points fall back to a scan.
    for (long r = 1;; ++r) {
      best.clear();
      if (r > 6) {
        for (size_t j = 0; j < n; ++j) {
          if (j != i) best.push_back((pts[j] - pts[i]).squaredNorm());
        }
        std::partial_sort(best.begin(), best.begin() + k, best.end());
        break;
      }
      for (long dz = -r; dz <= r; ++dz)
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx) {
            auto it = grid.find({c.x + dx, c.y + dy, c.z + dz});
            if (it == grid.end()) continue;
            for (int j : it->second) {
              if (static_cast<size_t>(j) != i) best.push_back((pts[j] - pts[i]).squaredNorm());
            }
          }
      if (static_cast<int>(best.size()) < k) continue;
      std::partial_sort(best.begin(), best.begin() + k, best.end());
      const double covered = static_cast<double>(r) * cell;
      if (best[k - 1] <= covered * covered) break;
    }
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += std::sqrt(best[j]);
    out[i] = s / k;
  }
  return out;
}

GaussianScene init_gaussians_from_pointmaps(const SequenceObservations& seq, std::span<const SE3> poses,
                                            std::span<const Mask> masks, std::span<const int> frames,
                                            const InitConfig& cfg, std::span<const Raster<double>> inv_depths) {
  cfg.filter.validate();
  if (frames.empty()) throw Error(ErrorKind::EmptyInitialization, "no frames to initialize from");
  GaussianScene scene;
  scene.sh_degree = cfg.sh_degree;
  const auto& K = seq.K;
  auto add = [&](int t, const Pixel& p, bool dynamic) {
    const auto& obs = seq.frames[t];
    const double depth = inv_depths.empty() ? obs.depth.at(p.x, p.y) : 1.0 / inv_depths[t].at(p.x, p.y);
    if (!(depth > kMinDepth) || !std::isfinite(depth)) return;
    GaussianPrimitive g;
    g.mu = poses[t].inverse().apply(unproject(K, Vec2(p.x, p.y), depth));
    g.opacity = cfg.opacity;
    g.dynamic_label = dynamic;
    const Vec3 rgb(obs.image.at(p.x, p.y, 0), obs.image.at(p.x, p.y, 1), obs.image.at(p.x, p.y, 2));
    set_sh_from_rgb(g.sh, cfg.sh_degree, rgb.cwiseMax(0.0).cwiseMin(1.0));
    scene.primitives.push_back(std::move(g));
  };
  for (size_t k = 0; k < frames.size(); ++k) {
    const int t = frames[k];
    const bool static_frame = k % static_cast<size_t>(cfg.frame_stride) == 0;
    const bool canonical = k == 0;
    if (!static_frame && !canonical) continue;
    for (const auto& p : filter_points(seq.frames[t], cfg.filter)) {
      const bool dyn = !masks.empty() && masks[t].at(p.x, p.y) != 0;
      if (dyn) {
        if (canonical) add(t, p, true);
      } else if (static_frame && p.x % cfg.pixel_stride == 0 && p.y % cfg.pixel_stride == 0) {
        add(t, p, false);
      }
    }
  }
  if (scene.primitives.empty()) throw Error(ErrorKind::EmptyInitialization, "every pixel was filtered out");

  std::vector<Vec3> pts(scene.size());
  for (size_t i = 0; i < pts.size(); ++i) pts[i] = scene.primitives[i].mu;
  const auto d = mean_knn_distance(pts, 3);
  for (size_t i = 0; i < pts.size(); ++i) scene.primitives[i].s = Vec3::Constant(std::max(d[i], kMinScale));
  return scene;
}

ControlPointSet init_control_points(const GaussianScene& scene, int n_control, double dynamic_fraction,
                                    std::uint64_t seed) {
  if (n_control < 1) throw Error(ErrorKind::InvalidArgument, "n_control must be at least 1");
  if (scene.primitives.empty()) throw Error(ErrorKind::EmptyInitialization, "no primitives for control points");
  std::vector<int> dyn;
  for (size_t i = 0; i < scene.size(); ++i) {
    if (scene.primitives[i].dynamic_label) dyn.push_back(static_cast<int>(i));
  }
  auto rng = make_stream(seed, "init-controls");
  const int want_dyn = static_cast<int>(std::lround(dynamic_fraction * n_control));
  const int n_dyn = std::min<int>(want_dyn, static_cast<int>(dyn.size()));
  std::vector<int> chosen;
  std::sample(dyn.begin(), dyn.end(), std::back_inserter(chosen), n_dyn, rng);

  ControlPointSet out;
  for (int i : chosen) out.points.push_back({scene.primitives[i].mu, 1.0});
  const BoundingBox b = scene_bounds(scene);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  while (static_cast<int>(out.size()) < n_control) {
    const Vec3 r(u(rng), u(rng), u(rng));
    out.points.push_back({b.lo + (b.hi - b.lo).cwiseProduct(r), 1.0});
  }
  assign_control_radii(out);
  return out;
}

}  // namespace magsplat
