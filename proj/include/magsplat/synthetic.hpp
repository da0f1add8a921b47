#pragma once

#include <cstdint>
#include <vector>

#include "magsplat/gaussian.hpp"
#include "magsplat/geometry.hpp"
#include "magsplat/pose.hpp"

namespace magsplat {

/// Procedural test world: a textured room (camera inside) with two static
/// boxes and one rigidly moving textured box. Depth, pointmaps, masks and
/// flow come from exact ray casting; images are splatted from the
/// ground-truth Gaussians sampled on the same surfaces.
struct SyntheticSceneSpec {
  int width = 64;
  int height = 48;
  int frames = 24;
  double focal_ratio = 0.8;  // fx = fy = focal_ratio * width

  bool dynamic = true;
  Vec3 object_center = Vec3(-0.5, 0.3, 3.5);
  Vec3 object_half_extent = Vec3(0.35, 0.35, 0.35);
  Vec3 object_travel = Vec3(1.0, 0.0, 0.0);  // displacement over the sequence
  double object_spin = 0.8;                  // radians about the y axis over the sequence

  double camera_travel = 1.0;    // sideways camera path length
  double surface_spacing = 0.08; // Gaussian grid spacing on surfaces

  double pointmap_noise = 0.0;  // std dev, scene units
  double depth_noise = 0.0;
  double flow_noise = 0.0;      // std dev, pixels
  double dyn_confidence_noise = 0.05;

  void validate() const;
};

struct SyntheticSequence {
  SequenceObservations observations;
  GaussianScene scene;              // canonical: object placed at its frame-0 pose
  std::vector<SE3> poses;           // world-to-camera ground truth
  std::vector<SE3> object_motion;   // canonical -> frame t rigid motion of the object
  std::vector<Mask> masks;          // true dynamic footprints

  int frame_count() const { return static_cast<int>(poses.size()); }
};

/// Flows are generated for every pair of ba_edge_pairs(frames).
SyntheticSequence generate_synthetic_scene(const SyntheticSceneSpec& spec, std::uint64_t seed);

/// Ground-truth primitives at frame t (dynamic ones moved by object_motion[t]).
GaussianScene scene_at_frame(const SyntheticSequence& seq, int t);

/// Fraction of pixels covered by the dynamic object, averaged over frames.
double dynamic_coverage(const SyntheticSequence& seq);

}  // namespace magsplat
