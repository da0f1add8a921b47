#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "magsplat/common.hpp"
#include "magsplat/geometry.hpp"

namespace magsplat {

using Vec6 = Eigen::Matrix<double, 6, 1>;

struct FrameObservations {
  Image image;                             // H x W x 3
  Image pointmap;                          // H x W x 3, world coordinates
  Raster<double> confidence;               // H x W
  Raster<double> depth;                    // H x W, camera z
  Mask motion_mask;                        // H x W, 1 = dynamic
  Raster<double> initial_dyn_confidence;   // H x W, pre-fusion motion score

  int width() const { return image.width; }
  int height() const { return image.height; }
  /// Throws ShapeMismatch unless every raster shares the image size.
  void validate() const;
};

/// Dense 2D displacement from frame `from` to frame `to` (H x W x 2), with an
/// optional per-pixel confidence (empty when absent).
struct FlowField {
  int from = 0;
  int to = 0;
  Image flow;
  Raster<double> confidence;
};

struct SequenceObservations {
  CameraIntrinsics K;
  std::vector<FrameObservations> frames;
  std::vector<FlowField> flows;

  const FlowField* find_flow(int from, int to) const;
};

struct FilterConfig {
  double tau_c = 0.0;
  double tau_d = std::numeric_limits<double>::infinity();

  void validate() const;
};

/// {p : W(p) > tau_c and D(p) < tau_d}, row-major order.
std::vector<Pixel> filter_points(const FrameObservations& obs, const FilterConfig& cfg);

/// Pixels of the K largest scores, ties broken by row-major index.
std::vector<Pixel> select_prompts(const Raster<double>& dyn_confidence, int K);
inline std::vector<Pixel> select_prompts(const FrameObservations& obs, int K) {
  return select_prompts(obs.initial_dyn_confidence, K);
}

/// Union of the segments whose mean confidence exceeds tau_m, OR'ed with
/// the pixels whose own confidence exceeds tau_m.
Mask fuse_masks(std::span<const Mask> segments, const Raster<double>& dyn_confidence, double tau_m);

/// {p in S : M(p) = 0}.
std::vector<Pixel> static_set(std::span<const Pixel> S, const Mask& motion_mask);

/// Promptable segmentation boundary.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual std::vector<Mask> segment(int frame, const Image& image, std::span<const Pixel> prompts) = 0;
};

/// Returns the 4-connected components of a reference dynamic mask that
/// contain at least one prompt.
class OracleSegmenter final : public Segmenter {
 public:
  explicit OracleSegmenter(std::vector<Mask> reference) : reference_(std::move(reference)) {}
  std::vector<Mask> segment(int frame, const Image& image, std::span<const Pixel> prompts) override;

 private:
  std::vector<Mask> reference_;
};

/// Serves precomputed segments (for example from an external SAM2 run) stored
/// as RAS1 u8 rasters `<dir>/%04d_%02d.ras`.
class RasterSegmenter final : public Segmenter {
 public:
  explicit RasterSegmenter(std::string dir) : dir_(std::move(dir)) {}
  std::vector<Mask> segment(int frame, const Image& image, std::span<const Pixel> prompts) override;

 private:
  std::string dir_;
};

std::vector<Mask> connected_components(const Mask& mask);

struct Correspondence {
  Vec3 world_point = Vec3::Zero();
  Vec2 pixel = Vec2::Zero();
  double weight = 1.0;
};

struct RansacConfig {
  double inlier_threshold_px = 2.0;
  double confidence = 0.999;
  int max_iters = 2000;
  int min_sample = 6;
  double min_inlier_ratio = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PnpResult {
  SE3 pose;  // world-to-camera
  std::vector<int> inliers;
  int iterations = 0;
};

/// Projection-matrix DLT on >= 6 points, projected onto SE(3).
SE3 dlt_pose(std::span<const Correspondence> corrs, const CameraIntrinsics& K);
PnpResult pnp_ransac(std::span<const Correspondence> corrs, const CameraIntrinsics& K, const RansacConfig& cfg);

/// r = Pi(T X) - u and its Jacobian under the left perturbation
/// T <- exp(delta) T with delta = (v, omega).
Vec2 reprojection_residual(const SE3& pose, const Correspondence& c, const CameraIntrinsics& K,
                           Eigen::Matrix<double, 2, 6>* J = nullptr);
double reprojection_cost(const SE3& pose, std::span<const Correspondence> corrs, const CameraIntrinsics& K);
SE3 refine_pose_gn(const SE3& pose, std::span<const Correspondence> corrs, const CameraIntrinsics& K, int iters);

// ---------------------------------------------------------------------------
// Dense bundle adjustment

struct BAEdge {
  int i = 0;
  int j = 0;
  Image target;             // H x W x 2, p*_ij in frame j pixel coordinates
  Raster<double> weight;    // H x W x 2, diagonal of Sigma_ij
};

struct BAProblem {
  CameraIntrinsics K;
  std::vector<SE3> poses;                  // world-to-camera
  std::vector<Raster<double>> inv_depths;  // H x W per frame
  std::vector<BAEdge> edges;
  std::vector<Mask> masks;                 // 1 = dynamic, excluded

  int frame_count() const { return static_cast<int>(poses.size()); }
  void validate() const;
};

struct BACost {
  double cost = 0.0;
  std::vector<Image> residuals;  // per edge, H x W x 2, zero where gated
  int active = 0;
};

/// Residual p*_ij - Pi(T_j T_i^-1 Pi^-1(p, 1/rho_i(p))) per static pixel of
/// frame i; cost = sum of weight * r^2.
BACost dba_cost(const BAProblem& problem);

struct BAUpdate {
  std::vector<Vec6> pose;                   // per frame, frame 0 always zero
  std::vector<Raster<double>> inv_depth;    // per frame
};

/// One Gauss-Newton step on the normal equations with the depth block
/// eliminated by the Schur complement. Poses get damping * I; the diagonal
/// depth block is scaled by (1 + damping).
BAUpdate dba_step(const BAProblem& problem, double damping, int workers = 1);
void apply_update(BAProblem& problem, const BAUpdate& update);

/// Stacked weighted Jacobian sqrt(W) J and residual sqrt(W) r over all active
/// pixels with columns [poses 1..N-1 (6 each), depth variables in frame-major
/// pixel order]. Meant for small verification problems.
struct DenseLinearization {
  Eigen::MatrixXd J;
  Eigen::VectorXd r;
  std::vector<int> depth_columns;  // per (frame, pixel) flat index, -1 if inactive
};
DenseLinearization dba_linearize_dense(const BAProblem& problem);

struct MaBaConfig {
  FilterConfig filter;
  RansacConfig ransac;
  int prompts = 5;
  double tau_m = 0.5;
  bool use_masks = true;
  int max_ba_iters = 30;
  double cost_tolerance = 1e-8;
  double damping = 1e-4;
  int workers = 1;
};

struct MaBaResult {
  std::vector<SE3> poses;          // world-to-camera after refinement
  std::vector<SE3> initial_poses;  // from pairwise PnP
  std::vector<Raster<double>> inv_depths;
  std::vector<Mask> masks;
  std::vector<double> cost_history;
};

/// Edge set: consecutive and stride-2 pairs, both directions.
std::vector<std::pair<int, int>> ba_edge_pairs(int frames);

MaBaResult run_ma_ba(const SequenceObservations& seq, const MaBaConfig& cfg, Segmenter* segmenter);

/// Camera-to-world poses from world-to-camera ones.
std::vector<SE3> invert_poses(std::span<const SE3> poses);

}  // namespace magsplat
