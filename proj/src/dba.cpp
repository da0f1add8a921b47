#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "magsplat/parallel.hpp"
#include "magsplat/pose.hpp"

namespace magsplat {

namespace {

constexpr double kMinInvDepth = 1e-6;
constexpr double kInactiveDepth = 1e-12;

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat12 = Eigen::Matrix<double, 12, 12>;
using Vec12 = Eigen::Matrix<double, 12, 1>;

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

bool gated(const BAProblem& pb, int frame, size_t pixel) {
  return !pb.masks.empty() && pb.masks[frame].data[pixel] != 0;
}

// One residual with its derivatives: columns 0-5 pose i, 6-11 pose j, 12 rho.
struct PixelTerm {
  Vec2 r;
  Eigen::Matrix<double, 2, 13> J;
};

// Returns false when the pixel does not contribute.
bool pixel_term(const BAProblem& pb, const BAEdge& e, const Mat3& Rji, const Vec3& tji, int x, int y, bool jac,
                PixelTerm& out) {
  const auto& K = pb.K;
  const double rho = pb.inv_depths[e.i].at(x, y);
  const Vec3 ray((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
  const Vec3 Xi = ray / rho;
  const Vec3 Xj = Rji * Xi + tji;
  if (Xj.z() <= kMinDepth) return false;
  out.r.y() = e.target.at(x, y, 1) - (K.fy * Xj.y() / Xj.z() + K.cy);
  out.r.x() = e.target.at(x, y, 0) - (K.fx * Xj.x() / Xj.z() + K.cx);
  if (jac) {
    const Mat23 P = -projection_jacobian(K, Xj);
    Eigen::Matrix<double, 3, 13> dX;
    dX.block<3, 3>(0, 0) = -Rji;
    dX.block<3, 3>(0, 3) = Rji * skew(Xi);
    dX.block<3, 3>(0, 6) = Mat3::Identity();
    dX.block<3, 3>(0, 9) = -skew(Xj);
    dX.col(12) = Rji * (-Xi / rho);
    out.J = P * dX;
  }
  return true;
}

void relative(const BAProblem& pb, const BAEdge& e, Mat3& Rji, Vec3& tji) {
  const SE3 rel = compose(pb.poses[e.j], pb.poses[e.i].inverse());
  Rji = rel.rotation_matrix();
  tji = rel.translation;
}

// Normal-equation contributions of one edge.
struct EdgeSystem {
  Mat12 B = Mat12::Zero();
  Vec12 v = Vec12::Zero();
  std::vector<double> C, w;                      // per pixel of frame i
  std::vector<Eigen::Matrix<double, 12, 1>> E;   // per pixel, pose i then pose j
};

EdgeSystem linearize_edge(const BAProblem& pb, const BAEdge& e) {
  const int W = pb.K.width, H = pb.K.height;
  EdgeSystem s;
  s.C.assign(static_cast<size_t>(W) * H, 0.0);
  s.w.assign(s.C.size(), 0.0);
  s.E.assign(s.C.size(), Eigen::Matrix<double, 12, 1>::Zero());
  Mat3 Rji;
  Vec3 tji;
  relative(pb, e, Rji, tji);
  PixelTerm t;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const size_t p = static_cast<size_t>(y) * W + x;
      if (gated(pb, e.i, p)) continue;
      const double wx = e.weight.at(x, y, 0), wy = e.weight.at(x, y, 1);
      if (wx == 0.0 && wy == 0.0) continue;
      if (!pixel_term(pb, e, Rji, tji, x, y, true, t)) continue;
      const Vec2 wv(wx, wy);
      const Eigen::Matrix<double, 2, 12> Jp = t.J.leftCols<12>();
      const Vec2 Jd = t.J.col(12);
      const Eigen::Matrix<double, 12, 2> JpW = Jp.transpose() * wv.asDiagonal();
      s.B.noalias() += JpW * Jp;
      s.v.noalias() -= JpW * t.r;
      s.E[p].noalias() += JpW * Jd;
      s.C[p] += Jd.dot(wv.cwiseProduct(Jd));
      s.w[p] -= Jd.dot(wv.cwiseProduct(t.r));
    }
  }
  return s;
}

}  // namespace

void BAProblem::validate() const {
  K.validate();
  const int n = frame_count();
  if (static_cast<int>(inv_depths.size()) != n) throw Error(ErrorKind::LengthMismatch, "one inverse-depth map per pose");
  if (!masks.empty() && static_cast<int>(masks.size()) != n) throw Error(ErrorKind::LengthMismatch, "one mask per pose");
  for (int f = 0; f < n; ++f) {
    const auto& d = inv_depths[f];
    if (d.width != K.width || d.height != K.height || d.channels != 1) {
      throw Error(ErrorKind::ShapeMismatch, "inverse depth map does not match the intrinsics");
    }
    for (double v : d.data) {
      if (!(v > 0.0)) throw Error(ErrorKind::NonPositiveDepth, "inverse depths must be positive");
    }
    if (!masks.empty() && (masks[f].width != K.width || masks[f].height != K.height)) {
      throw Error(ErrorKind::ShapeMismatch, "mask does not match the intrinsics");
    }
  }
  for (const auto& e : edges) {
    if (e.i < 0 || e.j < 0 || e.i >= n || e.j >= n || e.i == e.j) {
      throw Error(ErrorKind::InvalidArgument, "edge references an invalid frame pair");
    }
    if (e.target.width != K.width || e.target.height != K.height || e.target.channels != 2 ||
        !e.weight.same_shape(e.target)) {
      throw Error(ErrorKind::ShapeMismatch, "edge target and weight must be H x W x 2");
    }
  }
}

BACost dba_cost(const BAProblem& pb) {
  const int W = pb.K.width, H = pb.K.height;
  BACost out;
  out.residuals.reserve(pb.edges.size());
  PixelTerm t;
  for (const auto& e : pb.edges) {
    Image res(W, H, 2, 0.0);
    Mat3 Rji;
    Vec3 tji;
    relative(pb, e, Rji, tji);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const size_t p = static_cast<size_t>(y) * W + x;
        if (gated(pb, e.i, p)) continue;
        const double wx = e.weight.at(x, y, 0), wy = e.weight.at(x, y, 1);
        if (wx == 0.0 && wy == 0.0) continue;
        if (!pixel_term(pb, e, Rji, tji, x, y, false, t)) continue;
        res.at(x, y, 0) = t.r.x();
        res.at(x, y, 1) = t.r.y();
        out.cost += wx * t.r.x() * t.r.x() + wy * t.r.y() * t.r.y();
        ++out.active;
      }
    }
    out.residuals.push_back(std::move(res));
  }
  return out;
}

BAUpdate dba_step(const BAProblem& pb, double damping, int workers) {
  pb.validate();
  const int N = pb.frame_count();
  const int W = pb.K.width, H = pb.K.height;
  const size_t P = static_cast<size_t>(W) * H;
  const int np = 6 * (N - 1);

  std::vector<EdgeSystem> systems(pb.edges.size());
  parallel_for_chunks(static_cast<int>(pb.edges.size()), workers,
                      [&](int k) { systems[k] = linearize_edge(pb, pb.edges[k]); });

  // Pose column offset of a frame, -1 for the gauge frame.
  auto col = [](int f) { return 6 * (f - 1); };
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(np, np);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(np);
  for (size_t k = 0; k < systems.size(); ++k) {
    const auto& e = pb.edges[k];
    const int f[2] = {e.i, e.j};
    for (int a = 0; a < 2; ++a) {
      if (f[a] == 0) continue;
      rhs.segment<6>(col(f[a])) += systems[k].v.segment<6>(6 * a);
      for (int b = 0; b < 2; ++b) {
        if (f[b] == 0) continue;
        S.block<6, 6>(col(f[a]), col(f[b])) += systems[k].B.block<6, 6>(6 * a, 6 * b);
      }
    }
  }

  // Depth block per source frame: C, w and the E columns over the frames
  // touched by that frame's edges.
  struct FrameDepth {
    std::vector<double> C, w;
    std::vector<int> frames;                       // pose frames with E entries
    std::vector<std::vector<Vec6>> E;              // [frame slot][pixel]
  };
  std::vector<FrameDepth> depth(N);
  for (size_t k = 0; k < systems.size(); ++k) {
    const auto& e = pb.edges[k];
    FrameDepth& fd = depth[e.i];
    if (fd.C.empty()) {
      fd.C.assign(P, 0.0);
      fd.w.assign(P, 0.0);
    }
    const int f[2] = {e.i, e.j};
    int slot[2];
    for (int a = 0; a < 2; ++a) {
      auto it = std::find(fd.frames.begin(), fd.frames.end(), f[a]);
      slot[a] = static_cast<int>(it - fd.frames.begin());
      if (it == fd.frames.end()) {
        fd.frames.push_back(f[a]);
        fd.E.emplace_back(P, Vec6::Zero());
      }
    }
    for (size_t p = 0; p < P; ++p) {
      fd.C[p] += systems[k].C[p];
      fd.w[p] += systems[k].w[p];
      fd.E[slot[0]][p] += systems[k].E[p].head<6>();
      fd.E[slot[1]][p] += systems[k].E[p].tail<6>();
    }
  }

  // Schur complement: S -= E C^-1 E^T, rhs -= E C^-1 w.
  for (int i = 0; i < N; ++i) {
    const FrameDepth& fd = depth[i];
    if (fd.C.empty()) continue;
    const int nf = static_cast<int>(fd.frames.size());
    for (size_t p = 0; p < P; ++p) {
      if (fd.C[p] <= kInactiveDepth) continue;
      const double inv_c = 1.0 / (fd.C[p] * (1.0 + damping));
      for (int a = 0; a < nf; ++a) {
        if (fd.frames[a] == 0) continue;
        const Vec6& ea = fd.E[a][p];
        rhs.segment<6>(col(fd.frames[a])) -= ea * (inv_c * fd.w[p]);
        for (int b = 0; b < nf; ++b) {
          if (fd.frames[b] == 0) continue;
          S.block<6, 6>(col(fd.frames[a]), col(fd.frames[b])).noalias() -= (ea * inv_c) * fd.E[b][p].transpose();
        }
      }
    }
  }
  S.diagonal().array() += damping;

  Eigen::VectorXd dxi = Eigen::VectorXd::Zero(np);
  if (np > 0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    const auto d = ldlt.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    if (ldlt.info() != Eigen::Success || !(dmax > 0.0) || d.minCoeff() <= 1e-14 * dmax) {
      throw Error(ErrorKind::SingularSystem, "reduced camera system is singular");
    }
    dxi = ldlt.solve(rhs);
  }

  BAUpdate up;
  up.pose.assign(N, Vec6::Zero());
  for (int f = 1; f < N; ++f) up.pose[f] = dxi.segment<6>(col(f));
  up.inv_depth.reserve(N);
  for (int i = 0; i < N; ++i) {
    Raster<double> dd(W, H, 1, 0.0);
    const FrameDepth& fd = depth[i];
    if (!fd.C.empty()) {
      for (size_t p = 0; p < P; ++p) {
        if (fd.C[p] <= kInactiveDepth) continue;
        double acc = fd.w[p];
        for (size_t a = 0; a < fd.frames.size(); ++a) {
          if (fd.frames[a] != 0) acc -= fd.E[a][p].dot(up.pose[fd.frames[a]]);
        }
        dd.data[p] = acc / (fd.C[p] * (1.0 + damping));
      }
    }
    up.inv_depth.push_back(std::move(dd));
  }
  return up;
}

void apply_update(BAProblem& pb, const BAUpdate& up) {
  const int N = pb.frame_count();
  for (int f = 1; f < N; ++f) pb.poses[f] = compose(SE3::exp(up.pose[f]), pb.poses[f]);
  for (int f = 0; f < N; ++f) {
    auto& d = pb.inv_depths[f].data;
    const auto& dd = up.inv_depth[f].data;
    for (size_t p = 0; p < d.size(); ++p) d[p] = std::max(d[p] + dd[p], kMinInvDepth);
  }
}

DenseLinearization dba_linearize_dense(const BAProblem& pb) {
  pb.validate();
  const int N = pb.frame_count();
  const int W = pb.K.width, H = pb.K.height;
  const size_t P = static_cast<size_t>(W) * H;
  const int np = 6 * (N - 1);

  // Depth activity follows the same rule as dba_step.
  std::vector<double> C(N * P, 0.0);
  for (const auto& e : pb.edges) {
    const EdgeSystem s = linearize_edge(pb, e);
    for (size_t p = 0; p < P; ++p) C[e.i * P + p] += s.C[p];
  }
  DenseLinearization out;
  out.depth_columns.assign(N * P, -1);
  int nd = 0;
  for (size_t k = 0; k < C.size(); ++k) {
    if (C[k] > kInactiveDepth) out.depth_columns[k] = np + nd++;
  }

  std::vector<Eigen::Matrix<double, 1, Eigen::Dynamic>> rows;
  std::vector<double> rvals;
  PixelTerm t;
  for (const auto& e : pb.edges) {
    Mat3 Rji;
    Vec3 tji;
    relative(pb, e, Rji, tji);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const size_t p = static_cast<size_t>(y) * W + x;
        if (gated(pb, e.i, p)) continue;
        const double wv[2] = {e.weight.at(x, y, 0), e.weight.at(x, y, 1)};
        if (wv[0] == 0.0 && wv[1] == 0.0) continue;
        if (!pixel_term(pb, e, Rji, tji, x, y, true, t)) continue;
        for (int c = 0; c < 2; ++c) {
          const double sw = std::sqrt(wv[c]);
          Eigen::Matrix<double, 1, Eigen::Dynamic> row = Eigen::RowVectorXd::Zero(np + nd);
          if (e.i != 0) row.segment<6>(6 * (e.i - 1)) += sw * t.J.row(c).segment<6>(0);
          if (e.j != 0) row.segment<6>(6 * (e.j - 1)) += sw * t.J.row(c).segment<6>(6);
          const int dc = out.depth_columns[e.i * P + p];
          if (dc >= 0) row(dc) = sw * t.J(c, 12);
          rows.push_back(std::move(row));
          rvals.push_back(sw * t.r(c));
        }
      }
    }
  }
  out.J.resize(static_cast<Eigen::Index>(rows.size()), np + nd);
  out.r.resize(static_cast<Eigen::Index>(rows.size()));
  for (size_t k = 0; k < rows.size(); ++k) {
    out.J.row(static_cast<Eigen::Index>(k)) = rows[k];
    out.r(static_cast<Eigen::Index>(k)) = rvals[k];
  }
  return out;
}

}  // namespace magsplat
