#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "magsplat/deformation.hpp"
#include "magsplat/gaussian.hpp"
#include "magsplat/pose.hpp"

namespace magsplat {

struct InitConfig {
  FilterConfig filter;
  int pixel_stride = 2;  // static pixels
  int frame_stride = 4;  // over the training frames, static pixels only
  double opacity = 0.1;
  int sh_degree = 1;
};

/// One primitive per kept pixel at T_t^-1 unproject(p, depth). Static pixels
/// come from every frame_stride-th listed frame on a pixel_stride grid;
/// dynamic pixels come from the first listed frame only, which defines the
/// canonical time. Depth is 1 / inv_depths[t] when given, else the depth
/// raster. Scales are the mean distance to the 3 nearest other primitives.
GaussianScene init_gaussians_from_pointmaps(const SequenceObservations& seq, std::span<const SE3> poses,
                                            std::span<const Mask> masks, std::span<const int> frames,
                                            const InitConfig& cfg,
                                            std::span<const Raster<double>> inv_depths = {});

/// round(dynamic_fraction * n) points at distinct dynamic primitives (fewer
/// if there are not enough), the rest uniform in the scene's bounding box.
ControlPointSet init_control_points(const GaussianScene& scene, int n_control, double dynamic_fraction,
                                    std::uint64_t seed);

struct BoundingBox {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
  Vec3 center() const { return 0.5 * (lo + hi); }
  double max_half_extent() const { return 0.5 * (hi - lo).maxCoeff(); }
  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};
BoundingBox scene_bounds(const GaussianScene& scene);

/// Mean distance from each point to its k nearest others (grid accelerated).
std::vector<double> mean_knn_distance(std::span<const Vec3> points, int k);

}  // namespace magsplat
