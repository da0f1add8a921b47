#pragma once

#include <optional>
#include <string>
#include <vector>

#include "magsplat/common.hpp"
#include "magsplat/deformation.hpp"
#include "magsplat/gaussian.hpp"
#include "magsplat/geometry.hpp"

namespace magsplat {

struct LossWeights {
  double lambda_arap = 0.5;
  double lambda_rigid = 1.0;
  double lambda_dssim = 0.2;

  void validate() const;
};

struct LossBreakdown {
  double render = 0.0;
  double control = 0.0;
  double arap = 0.0;
  double rigid = 0.0;
  double total = 0.0;
};

inline constexpr double kPsnrCap = 100.0;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// 10 log10(1 / MSE), capped at 100 dB when MSE < 1e-10.
double psnr(const Image& a, const Image& b);

/// Mean SSIM over all valid window positions and channels. Images smaller
/// than the window use the largest odd window that fits.
double ssim(const Image& a, const Image& b);
/// Same value; when grad_a is given it receives d ssim / d a.
double ssim(const Image& a, const Image& b, Image* grad_a);
inline double dssim(const Image& a, const Image& b) { return (1.0 - ssim(a, b)) / 2.0; }

/// Number of scales used by ms_ssim for a given smaller image dimension.
int ms_ssim_scales(int min_dim);
double ms_ssim(const Image& a, const Image& b);

/// (1 - lambda_dssim) L1 + lambda_dssim DSSIM. grad (optional) gets d/d img.
double l_render(const Image& img, const Image& gt, const LossWeights& w, Image* grad = nullptr);

struct ControlLoss {
  double value = 0.0;
  bool empty_mask = false;
};

/// L1 over mask pixels plus DSSIM over the mask's bounding box (grown to at
/// least one SSIM window). A full mask gives l_render exactly.
ControlLoss l_control(const Image& img, const Image& gt, const Mask& mask, const LossWeights& w,
                      Image* grad = nullptr);

/// Each control's K nearest other controls with normalized kernel weights.
using ArapNeighbors = std::vector<NeighborList>;
ArapNeighbors compute_arap_neighbors(const ControlPointSet& controls, int K = 4);

struct ArapGradients {
  TransformGradients t1;
  TransformGradients t2;
};

/// sum_i sum_k w_ik |(p_i^t1 - p_k^t1) - R_i (p_i^t2 - p_k^t2)|^2 with
/// p^t = p + T^t and R_i = R_i^t1 (R_i^t2)^-1.
double l_arap(const ControlPointSet& controls, const ControlTransforms& at_t1, const ControlTransforms& at_t2,
              const ArapNeighbors& neighbors, ArapGradients* grads = nullptr);
double l_arap(const ControlPointSet& controls, const DeformationField& field, double t1, double t2,
              const ArapNeighbors& neighbors);

/// sum over static primitives of |mu' - mu|^2. grad_mu (optional, indexed
/// like the scene) receives d/d mu'.
double l_rigid(const GaussianScene& scene, const std::vector<Vec3>& warped, std::vector<Vec3>* grad_mu = nullptr);

/// total = render + lambda_arap arap + lambda_rigid rigid; control is reported only.
LossBreakdown total_loss(double render, double control, double arap, double rigid, const LossWeights& w);

struct FrameMetrics {
  int frame = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
};

FrameMetrics frame_metrics(int frame, const Image& rendered, const Image& gt);
std::string metrics_csv(const std::vector<FrameMetrics>& rows);

}  // namespace magsplat
