#pragma once

#include <cstdint>
#include <vector>

#include "magsplat/common.hpp"
#include "magsplat/gaussian.hpp"
#include "magsplat/geometry.hpp"

namespace magsplat {

struct RenderContext {
  SE3 pose;  // world-to-camera
  CameraIntrinsics K;
  Vec3 background = Vec3::Zero();
  int workers = 1;

  int width() const { return K.width; }
  int height() const { return K.height; }
};

struct RenderOutput {
  Image image;                         // H x W x 3
  Raster<double> final_transmittance;  // H x W
  Raster<std::int32_t> contrib_count;  // H x W
};

/// Per-primitive gradients, indexed like scene.primitives. Quaternion
/// gradients are with respect to the stored (possibly unnormalized) q, in
/// (w, x, y, z) order; d_sh uses the same basis-major layout as the SH array.
struct GradientBuffers {
  std::vector<Vec3> d_mu;
  std::vector<Vec4> d_q;
  std::vector<Vec3> d_s;
  std::vector<double> d_opacity;
  std::vector<double> d_sh;
  int sh_stride = 0;

  void reset(size_t count, int sh_degree);
  size_t size() const { return d_mu.size(); }
  bool all_finite() const;
  double* sh_of(size_t i) { return d_sh.data() + i * sh_stride; }
  const double* sh_of(size_t i) const { return d_sh.data() + i * sh_stride; }
};

/// Everything the backward pass needs from a forward evaluation: projected
/// splats in compositing order and the per-pixel contributor lists.
class ForwardState {
 public:
  struct Splat {
    int primitive = 0;
    SplattedGaussian sg;
    Vec3 p_cam = Vec3::Zero();
    Vec3 view_dir = Vec3::Zero();
    double view_dist = 0.0;
    Vec3 raw_color = Vec3::Zero();  // SH basis sum plus DC offset, before clamping
  };
  struct Contribution {
    std::int32_t splat = 0;  // index into splats()
    double alpha = 0.0;
    double transmittance = 0.0;  // T before this splat
  };

  const RenderOutput& output() const { return out_; }
  const std::vector<Splat>& splats() const { return splats_; }

 private:
  friend ForwardState render_forward(const GaussianScene&, const RenderContext&);
  friend GradientBuffers render_backward(const GaussianScene&, const RenderContext&,
                                         const ForwardState&, const Image&);
  RenderOutput out_;
  std::vector<Splat> splats_;
  std::vector<std::uint32_t> offsets_;  // per pixel, size W*H+1
  std::vector<Contribution> contributions_;
};

/// Tile-binned forward pass that keeps the contributor lists.
ForwardState render_forward(const GaussianScene& scene, const RenderContext& ctx);

/// C = sum_i T_i a_i c_i + T_final * background, splats sorted front to back
/// by camera depth of their centers (ties by primitive index).
RenderOutput render(const GaussianScene& scene, const RenderContext& ctx);

/// Evaluates every splat at every pixel. Verification reference for render().
RenderOutput render_oracle(const GaussianScene& scene, const RenderContext& ctx);

/// Gradients of sum_pixels <upstream, C(u)>.
GradientBuffers render_backward(const GaussianScene& scene, const RenderContext& ctx,
                                const Image& upstream);
GradientBuffers render_backward(const GaussianScene& scene, const RenderContext& ctx,
                                const ForwardState& forward, const Image& upstream);

}  // namespace magsplat
