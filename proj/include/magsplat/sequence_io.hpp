#pragma once

#include <optional>
#include <string>
#include <vector>

#include "magsplat/geometry.hpp"
#include "magsplat/pose.hpp"

namespace magsplat {

/// Directory layout of an ingested sequence:
///   intrinsics.txt            fx, fy, cx, cy, width, height as key = value
///   frames/%04d.png           RGB
///   pointmaps/%04d.ras        f32 x3, world coordinates
///   conf/%04d.ras             f32 x1
///   depth/%04d.ras            f32 x1
///   mask/%04d.ras             u8 x1, 1 = dynamic
///   dynconf/%04d.ras          f32 x1, optional prompt scores
///   flow/%04d_%04d.ras        f32 x2, from_to
///   flow_conf/%04d_%04d.ras   f32 x1, optional
///   poses_gt.txt              optional, TUM camera-to-world, timestamp = frame index
struct SequenceDirectory {
  SequenceObservations observations;
  std::optional<std::vector<SE3>> gt_poses;  // world-to-camera
};

SequenceDirectory read_sequence(const std::string& dir);
void write_sequence(const std::string& dir, const SequenceObservations& seq,
                    const std::vector<SE3>* gt_poses = nullptr);

/// Output of pose estimation as consumed by training:
///   poses.txt, initial_poses.txt   TUM camera-to-world
///   masks/%04d.ras                 fused motion masks
///   inv_depth/%04d.ras             refined inverse depth
///   cost_history.txt               one BA cost per line
void write_pose_estimate(const std::string& dir, const MaBaResult& result);
MaBaResult read_pose_estimate(const std::string& dir);

/// World-to-camera poses as a TUM camera-to-world file (timestamp = index).
void write_poses(const std::string& path, const std::vector<SE3>& world_to_camera);
std::vector<SE3> read_poses(const std::string& path);

}  // namespace magsplat
