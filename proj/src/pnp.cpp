#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "magsplat/pose.hpp"
#include "magsplat/rng.hpp"

namespace magsplat {

namespace {

constexpr int kPolishSteps = 3;

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Mat3 intrinsics_matrix(const CameraIntrinsics& K) {
  Mat3 m;
  m << K.fx, 0.0, K.cx, 0.0, K.fy, K.cy, 0.0, 0.0, 1.0;
  return m;
}

bool in_front(const SE3& pose, const Correspondence& c) { return pose.apply(c.world_point).z() > kMinDepth; }

// Sum of weighted squared residuals over points in front of the camera, and
// how many were behind.
std::pair<double, int> cost_and_behind(const SE3& pose, std::span<const Correspondence> corrs,
                                       const CameraIntrinsics& K) {
  double cost = 0.0;
  int behind = 0;
  for (const auto& c : corrs) {
    if (!in_front(pose, c)) {
      ++behind;
      continue;
    }
    cost += c.weight * reprojection_residual(pose, c, K).squaredNorm();
  }
  return {cost, behind};
}

struct Scored {
  std::vector<int> inliers;
  double error = 0.0;
};

Scored score_pose(const SE3& pose, std::span<const Correspondence> corrs, const CameraIntrinsics& K,
                  double threshold) {
  Scored s;
  for (size_t i = 0; i < corrs.size(); ++i) {
    if (!in_front(pose, corrs[i])) continue;
    const double e = reprojection_residual(pose, corrs[i], K).norm();
    if (e <= threshold) {
      s.inliers.push_back(static_cast<int>(i));
      s.error += e;
    }
  }
  return s;
}

std::vector<Correspondence> gather(std::span<const Correspondence> corrs, const std::vector<int>& idx) {
  std::vector<Correspondence> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(corrs[i]);
  return out;
}

// Gauss-Newton that keeps the incoming pose when it cannot make progress
// (degenerate samples inside RANSAC).
SE3 try_refine(const SE3& pose, std::span<const Correspondence> corrs, const CameraIntrinsics& K, int iters) {
  try {
    return refine_pose_gn(pose, corrs, K, iters);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::SingularNormalMatrix) throw;
    return pose;
  }
}

}  // namespace

void RansacConfig::validate() const {
  if (min_sample < 6) throw Error(ErrorKind::ConfigError, "RANSAC min_sample must be at least 6");
  if (!(confidence > 0.0 && confidence < 1.0)) throw Error(ErrorKind::ConfigError, "RANSAC confidence must lie in (0, 1)");
  if (!(inlier_threshold_px > 0.0)) throw Error(ErrorKind::ConfigError, "RANSAC threshold must be positive");
  if (max_iters < 1) throw Error(ErrorKind::ConfigError, "RANSAC max_iters must be positive");
  if (!(min_inlier_ratio >= 0.0 && min_inlier_ratio <= 1.0)) {
    throw Error(ErrorKind::ConfigError, "RANSAC min_inlier_ratio must lie in [0, 1]");
  }
}

SE3 dlt_pose(std::span<const Correspondence> corrs, const CameraIntrinsics& K) {
  const int n = static_cast<int>(corrs.size());
  if (n < 6) throw Error(ErrorKind::InsufficientCorrespondences, "DLT needs at least 6 correspondences");

  // Hartley normalization of both point sets.
  Vec2 c2 = Vec2::Zero();
  Vec3 c3 = Vec3::Zero();
  for (const auto& c : corrs) {
    c2 += c.pixel;
    c3 += c.world_point;
  }
  c2 /= n;
  c3 /= n;
  double d2 = 0.0, d3 = 0.0;
  for (const auto& c : corrs) {
    d2 += (c.pixel - c2).norm();
    d3 += (c.world_point - c3).norm();
  }
  d2 /= n;
  d3 /= n;
  if (!(d2 > 0.0) || !(d3 > 0.0)) throw Error(ErrorKind::DegenerateConfiguration, "correspondences collapse to a point");
  const double s2 = std::sqrt(2.0) / d2, s3 = std::sqrt(3.0) / d3;

  Eigen::MatrixXd A(2 * n, 12);
  for (int i = 0; i < n; ++i) {
    const Vec2 u = s2 * (corrs[i].pixel - c2);
    Eigen::Matrix<double, 1, 4> X;
    X << (s3 * (corrs[i].world_point - c3)).transpose(), 1.0;
    A.row(2 * i) << X, Eigen::RowVector4d::Zero(), -u.x() * X;
    A.row(2 * i + 1) << Eigen::RowVector4d::Zero(), X, -u.y() * X;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd p = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> Pn;
  Pn << p.segment<4>(0).transpose(), p.segment<4>(4).transpose(), p.segment<4>(8).transpose();

  Mat3 T2 = Mat3::Identity();
  T2(0, 0) = T2(1, 1) = s2;
  T2.block<2, 1>(0, 2) = -s2 * c2;
  Eigen::Matrix4d T3 = Eigen::Matrix4d::Identity();
  T3.topLeftCorner<3, 3>() *= s3;
  T3.block<3, 1>(0, 3) = -s3 * c3;
  Eigen::Matrix<double, 3, 4> M = intrinsics_matrix(K).inverse() * T2.inverse() * Pn * T3;

  Mat3 Am = M.leftCols<3>();
  if (Am.determinant() < 0.0) {
    M = -M;
    Am = -Am;
  }
  Eigen::JacobiSVD<Mat3> rs(Am, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double lambda = rs.singularValues().mean();
  if (!(lambda > 0.0)) throw Error(ErrorKind::DegenerateConfiguration, "DLT produced a rank-deficient projection");
  Mat3 R = rs.matrixU() * rs.matrixV().transpose();
  if (R.determinant() < 0.0) throw Error(ErrorKind::DegenerateConfiguration, "DLT rotation is a reflection");
  return SE3{Quaternion::from_matrix(R), M.col(3) / lambda};
}

Vec2 reprojection_residual(const SE3& pose, const Correspondence& c, const CameraIntrinsics& K,
                           Eigen::Matrix<double, 2, 6>* J) {
  const Vec3 pc = pose.apply(c.world_point);
  const Vec2 r = project(K, pc) - c.pixel;
  if (J) {
    Eigen::Matrix<double, 3, 6> dp;
    dp << Mat3::Identity(), -skew(pc);
    *J = projection_jacobian(K, pc) * dp;
  }
  return r;
}

double reprojection_cost(const SE3& pose, std::span<const Correspondence> corrs, const CameraIntrinsics& K) {
  return cost_and_behind(pose, corrs, K).first;
}

SE3 refine_pose_gn(const SE3& pose, std::span<const Correspondence> corrs, const CameraIntrinsics& K, int iters) {
  if (corrs.empty()) throw Error(ErrorKind::InsufficientCorrespondences, "pose refinement needs correspondences");
  using Mat6 = Eigen::Matrix<double, 6, 6>;
  SE3 current = pose;
  auto [cost, behind] = cost_and_behind(current, corrs, K);
  for (int it = 0; it < iters; ++it) {
    Mat6 H = Mat6::Zero();
    Vec6 g = Vec6::Zero();
    for (const auto& c : corrs) {
      if (!in_front(current, c)) continue;
      Eigen::Matrix<double, 2, 6> J;
      const Vec2 r = reprojection_residual(current, c, K, &J);
      H.noalias() += c.weight * J.transpose() * J;
      g.noalias() += c.weight * J.transpose() * r;
    }
    if (g.isZero(0.0)) break;
    Eigen::SelfAdjointEigenSolver<Mat6> eig(H);
    const double emax = eig.eigenvalues().maxCoeff();
    if (!(emax > 0.0) || eig.eigenvalues().minCoeff() <= 1e-12 * emax) {
      throw Error(ErrorKind::SingularNormalMatrix, "pose normal matrix is rank deficient");
    }
    // Undamped first, then Levenberg damping while the step increases cost.
    bool accepted = false;
    double lambda = 0.0;
    for (int attempt = 0; attempt < 12; ++attempt) {
      Mat6 Hd = H;
      Hd.diagonal() *= 1.0 + lambda;
      const Vec6 delta = -Hd.ldlt().solve(g);
      const SE3 cand = compose(SE3::exp(delta), current);
      const auto [c_cost, c_behind] = cost_and_behind(cand, corrs, K);
      if (c_behind <= behind && c_cost <= cost) {
        const bool stalled = c_cost == cost;
        current = cand;
        cost = c_cost;
        behind = c_behind;
        accepted = !stalled;
        break;
      }
      lambda = lambda == 0.0 ? 1e-4 : lambda * 10.0;
    }
    if (!accepted) break;
  }
  return current;
}

PnpResult pnp_ransac(std::span<const Correspondence> corrs, const CameraIntrinsics& K, const RansacConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(corrs.size());
  if (n < cfg.min_sample) {
    throw Error(ErrorKind::InsufficientCorrespondences,
                std::to_string(n) + " correspondences, need " + std::to_string(cfg.min_sample));
  }
  auto rng = make_stream(cfg.seed, "ransac");
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<Correspondence> sample(cfg.min_sample);

  PnpResult best;
  Scored best_score;
  bool have_best = false;
  long long needed = cfg.max_iters;
  int it = 0;
  for (; it < needed && it < cfg.max_iters; ++it) {
    // Partial Fisher-Yates draw of min_sample distinct indices.
    for (int k = 0; k < cfg.min_sample; ++k) {
      std::uniform_int_distribution<int> pick(k, n - 1);
      std::swap(pool[k], pool[pick(rng)]);
      sample[k] = corrs[pool[k]];
    }
    SE3 hyp;
    try {
      hyp = try_refine(dlt_pose(sample, K), sample, K, kPolishSteps);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateConfiguration && e.kind() != ErrorKind::BehindCamera) throw;
      continue;
    }
    Scored s = score_pose(hyp, corrs, K, cfg.inlier_threshold_px);
    const bool better = !have_best || s.inliers.size() > best_score.inliers.size() ||
                        (s.inliers.size() == best_score.inliers.size() && s.error < best_score.error);
    if (!better) continue;
    have_best = true;
    best.pose = hyp;
    best_score = std::move(s);
    const double w = static_cast<double>(best_score.inliers.size()) / n;
    const double miss = 1.0 - std::pow(w, cfg.min_sample);
    if (miss <= 0.0) {
      needed = it + 1;
    } else if (miss < 1.0) {
      needed = std::min<long long>(cfg.max_iters,
                                   static_cast<long long>(std::ceil(std::log(1.0 - cfg.confidence) / std::log(miss))));
    }
  }
  best.iterations = it;
  const int min_inliers = std::max(cfg.min_sample, static_cast<int>(std::ceil(cfg.min_inlier_ratio * n)));
  if (!have_best || static_cast<int>(best_score.inliers.size()) < min_inliers) {
    throw Error(ErrorKind::NoConsensus, "best hypothesis has " + std::to_string(best_score.inliers.size()) + " of " +
                                            std::to_string(n) + " inliers");
  }

  constexpr int kRefineIters = 10;
  best.pose = try_refine(best.pose, gather(corrs, best_score.inliers), K, kRefineIters);
  Scored final_score = score_pose(best.pose, corrs, K, cfg.inlier_threshold_px);
  if (static_cast<int>(final_score.inliers.size()) >= min_inliers) {
    best.pose = try_refine(best.pose, gather(corrs, final_score.inliers), K, kRefineIters);
    best_score = score_pose(best.pose, corrs, K, cfg.inlier_threshold_px);
  }
  best.inliers = std::move(best_score.inliers);
  return best;
}

}  // namespace magsplat
