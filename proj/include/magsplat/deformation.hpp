#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "magsplat/common.hpp"
#include "magsplat/gaussian.hpp"
#include "magsplat/geometry.hpp"
#include "magsplat/rasterizer.hpp"

namespace magsplat {

struct ControlPoint {
  Vec3 p = Vec3::Zero();  // canonical position
  double radius = 1.0;    // RBF kernel radius
};

struct ControlPointSet {
  std::vector<ControlPoint> points;

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  void validate() const;
};

/// Sets every radius to the mean distance to the 3 nearest other controls.
/// A lone control keeps its radius.
void assign_control_radii(ControlPointSet& controls);

struct FieldConfig {
  int pos_freqs = 6;
  int time_freqs = 4;
  int hidden_layers = 4;
  int hidden_width = 128;
};

/// Intermediate activations of a batched field evaluation, kept for backward.
struct FieldTape {
  double t = 0.0;
  std::vector<Eigen::MatrixXd> activations;  // input, then each hidden layer output
  Eigen::MatrixXd head;                      // 7 x N raw outputs
};

/// MLP (p, t) -> SE3. Input is a sinusoidal encoding of the normalized
/// position and time; the last layer is zero at construction so every query
/// returns the identity.
class DeformationField {
 public:
  DeformationField() = default;
  DeformationField(const FieldConfig& cfg, std::uint64_t seed);

  /// Positions are mapped to (p - center) * inv_extent before encoding.
  void set_normalization(const Vec3& center, double inv_extent);
  const Vec3& center() const { return center_; }
  double inv_extent() const { return inv_extent_; }
  const FieldConfig& config() const { return cfg_; }

  int input_dim() const;
  size_t parameter_count() const { return params_.size(); }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }
  /// (rows, cols) of each weight matrix; biases follow each matrix.
  std::vector<std::pair<int, int>> layer_shapes() const;

  SE3 query(const Vec3& p, double t) const;
  std::vector<SE3> evaluate(std::span<const Vec3> points, double t, FieldTape* tape = nullptr) const;

  /// Accumulates into grad (size parameter_count()) the gradient given
  /// dL/d(unit rotation quaternion, wxyz) and dL/d(translation) per point.
  void backward(const FieldTape& tape, std::span<const Vec4> d_rotation, std::span<const Vec3> d_translation,
                std::vector<double>& grad) const;

  std::vector<std::uint8_t> encode(bool double_precision) const;
  static DeformationField decode(std::span<const std::uint8_t> bytes);

 private:
  Eigen::MatrixXd encode_inputs(std::span<const Vec3> points, double t) const;
  static SE3 transform_from_head(const Eigen::Ref<const Eigen::VectorXd>& h);

  FieldConfig cfg_;
  Vec3 center_ = Vec3::Zero();
  double inv_extent_ = 1.0;
  std::vector<double> params_;
};

void write_field(const DeformationField& field, const std::string& path);
DeformationField read_field(const std::string& path);

std::vector<std::uint8_t> encode_controls(const ControlPointSet& controls);
ControlPointSet decode_controls(std::span<const std::uint8_t> bytes);

struct Neighbor {
  std::int32_t index = 0;
  double weight = 0.0;  // normalized
  double kernel = 0.0;  // unnormalized exp(-d^2 / 2 sigma^2)
};

using NeighborList = std::vector<Neighbor>;

/// One list per Gaussian.
struct NeighborWeights {
  std::vector<NeighborList> lists;
  size_t size() const { return lists.size(); }
};

/// Kernel weights over the K nearest controls (ties by index), normalized.
NeighborList lbs_weights(const Vec3& mu, const ControlPointSet& controls, int K);
/// Static primitives get empty lists.
NeighborWeights compute_neighbor_weights(const GaussianScene& scene, const ControlPointSet& controls, int K);

/// Per-control transforms at one time, indexed like the control set.
using ControlTransforms = std::vector<SE3>;

ControlTransforms control_transforms(const DeformationField& field, const ControlPointSet& controls, double t,
                                     FieldTape* tape = nullptr);

Vec3 warp_position(const GaussianPrimitive& g, const NeighborList& weights, const ControlPointSet& controls,
                   const ControlTransforms& transforms);
Vec3 warp_position(const GaussianPrimitive& g, const NeighborList& weights, const ControlPointSet& controls,
                   const DeformationField& field, double t);

/// Weighted sum of neighbor rotations, each sign-aligned with the first.
Vec4 blend_rotations(const NeighborList& weights, const ControlTransforms& transforms);
Quaternion warp_orientation(const Quaternion& q, const NeighborList& weights, const ControlTransforms& transforms);
Quaternion warp_orientation(const Quaternion& q, const NeighborList& weights, const ControlPointSet& controls,
                            const DeformationField& field, double t);

/// Scene at time t: dynamic primitives warped, static ones copied.
GaussianScene warp_scene(const GaussianScene& canonical, const NeighborWeights& weights,
                         const ControlPointSet& controls, const ControlTransforms& transforms);

/// Detached pull-back of warped-scene gradients onto the canonical
/// parameters. Blend weights and control transforms are constants.
GradientBuffers pull_back_detached(const GaussianScene& canonical, const GaussianScene& warped,
                                   const NeighborWeights& weights, const ControlTransforms& transforms,
                                   const GradientBuffers& warped_grads);

/// Gradient of the loss with respect to the control transforms (through the
/// dynamic primitives' positions and orientations).
struct TransformGradients {
  std::vector<Vec4> d_rotation;  // w.r.t. unit rotation quaternion, wxyz
  std::vector<Vec3> d_translation;
};

TransformGradients transform_gradients(const GaussianScene& canonical, const NeighborWeights& weights,
                                       const ControlPointSet& controls, const ControlTransforms& transforms,
                                       const GradientBuffers& warped_grads);

struct ControlImpact {
  std::vector<double> g;              // per control
  std::vector<double> gaussian_energy;  // per Gaussian, sum of |dL/dmu|^2

  void reset(size_t controls, size_t gaussians);
};

/// g_k += sum_j kernel_jk |dL/dmu_j|^2 over dynamic Gaussians.
void accumulate_point_impact(const GradientBuffers& grads, const NeighborWeights& weights,
                             const GaussianScene& scene, ControlImpact& impact);
ControlImpact accumulate_point_impact(const GradientBuffers& grads, const NeighborWeights& weights,
                                      const GaussianScene& scene);

/// For each control with g_k > threshold adds a control at the impact-weighted
/// mean of its neighboring dynamic Gaussians, with the parent's radius. When
/// max_count would be exceeded the highest-impact triggers win.
ControlPointSet densify_control_points(const ControlPointSet& controls, const ControlImpact& impact,
                                       double threshold, const NeighborWeights& weights,
                                       const GaussianScene& scene, size_t max_count = SIZE_MAX);

}  // namespace magsplat
