#include <cstdio>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "magsplat/geometry.hpp"
#include "test_support.hpp"

using namespace magsplat;
using magsplat::testing::random_se3;
using magsplat::testing::random_unit_quat;
using magsplat::testing::random_vec3;

TEST(Quaternion, IdentityIsNeutral) {
  std::mt19937_64 rng(1);
  const Quaternion q = random_unit_quat(rng);
  const Quaternion r = Quaternion::identity() * q;
  EXPECT_DOUBLE_EQ(r.w, q.w);
  EXPECT_DOUBLE_EQ(r.x, q.x);
  EXPECT_DOUBLE_EQ(r.y, q.y);
  EXPECT_DOUBLE_EQ(r.z, q.z);
}

TEST(Quaternion, HamiltonProductOfUnitI) {
  const Quaternion i{0, 1, 0, 0};
  const Quaternion r = i * i;
  EXPECT_DOUBLE_EQ(r.w, -1.0);
  EXPECT_DOUBLE_EQ(r.x, 0.0);
  EXPECT_DOUBLE_EQ(r.y, 0.0);
  EXPECT_DOUBLE_EQ(r.z, 0.0);
}

TEST(Quaternion, NormIsMultiplicative) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 200; ++k) {
    const Quaternion a = random_unit_quat(rng), b = random_unit_quat(rng);
    EXPECT_NEAR((a * b).norm(), a.norm() * b.norm(), 1e-9);
  }
}

TEST(Quaternion, NormalizeIsUnitWithNonNegativeW) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 3);
  for (int k = 0; k < 200; ++k) {
    const Quaternion q = Quaternion{n(rng), n(rng), n(rng), n(rng)}.normalized();
    EXPECT_LE(std::abs(q.squared_norm() - 1.0), 1e-9);
    EXPECT_GE(q.w, 0.0);
  }
}

TEST(SE3, ApplyBasics) {
  const Vec3 p(0.3, -2.0, 5.0);
  EXPECT_EQ(se3_apply(SE3::identity(), p), p);
  const SE3 t{Quaternion::identity(), Vec3(1, 2, 3)};
  EXPECT_EQ(se3_apply(t, Vec3::Zero()), Vec3(1, 2, 3));
  const SE3 rz{Quaternion::from_axis_angle(Vec3::UnitZ(), M_PI / 2), Vec3::Zero()};
  const Vec3 r = se3_apply(rz, Vec3(1, 0, 0));
  EXPECT_NEAR(r.x(), 0.0, 1e-12);
  EXPECT_NEAR(r.y(), 1.0, 1e-12);
  EXPECT_NEAR(r.z(), 0.0, 1e-12);
}

TEST(SE3, GroupLaws) {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 200; ++k) {
    const SE3 a = random_se3(rng, 5.0), b = random_se3(rng, 5.0), c = random_se3(rng, 5.0);
    const SE3 e = a * a.inverse();
    EXPECT_NEAR(e.translation.norm(), 0.0, 1e-9);
    EXPECT_NEAR(e.rotation.angle(), 0.0, 1e-7);  // angle is sqrt-sensitive near zero
    EXPECT_LE(std::abs(e.rotation.w - 1.0), 1e-9);
    const Vec3 p = random_vec3(rng, -3, 3);
    EXPECT_LE(((a * b) * c).apply(p).isApprox((a * (b * c)).apply(p), 1e-9) ? 0.0 : 1.0, 0.0);
    EXPECT_LE((a.inverse().apply(a.apply(p)) - p).norm(), 1e-9);
  }
}

TEST(Camera, ProjectExamples) {
  const CameraIntrinsics K{100, 100, 50, 50, 101, 101};
  const Vec2 a = project(K, Vec3(0, 0, 1));
  EXPECT_DOUBLE_EQ(a.x(), 50.0);
  EXPECT_DOUBLE_EQ(a.y(), 50.0);
  const Vec2 b = project(K, Vec3(1, 0, 2));
  EXPECT_DOUBLE_EQ(b.x(), 100.0);
  EXPECT_DOUBLE_EQ(b.y(), 50.0);
  try {
    project(K, Vec3(0, 0, -1));
    FAIL() << "expected BehindCamera";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BehindCamera);
  }
}

TEST(Camera, UnprojectExamplesAndRoundTrip) {
  const CameraIntrinsics K{100, 100, 50, 50, 101, 101};
  EXPECT_EQ(unproject(K, Vec2(50, 50), 2.0), Vec3(0, 0, 2));
  const Vec3 p = unproject(K, Vec2(150, 50), 2.0);
  EXPECT_DOUBLE_EQ(p.x(), 2.0);
  EXPECT_DOUBLE_EQ(p.y(), 0.0);
  EXPECT_DOUBLE_EQ(p.z(), 2.0);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 100), d(0.1, 50);
  const CameraIntrinsics K2{321.5, 298.0, 60.2, 47.9, 120, 96};
  for (int k = 0; k < 100; ++k) {
    const Vec2 px(u(rng), u(rng));
    const Vec2 back = project(K2, unproject(K2, px, d(rng)));
    EXPECT_LE((back - px).norm(), 1e-9);
  }
  EXPECT_THROW(unproject(K, Vec2(1, 1), 0.0), Error);
}

TEST(Camera, ProjectionJacobian) {
  const CameraIntrinsics K{100, 100, 50, 50, 101, 101};
  const Mat23 J = projection_jacobian(K, Vec3(0, 0, 1));
  Mat23 expected;
  expected << 100, 0, 0, 0, 100, 0;
  EXPECT_TRUE(J.isApprox(expected));

  // Doubling z halves the first two columns.
  const Vec3 p(0.4, -0.7, 2.0);
  const Mat23 J1 = projection_jacobian(K, p), J2 = projection_jacobian(K, Vec3(p.x(), p.y(), 2 * p.z()));
  EXPECT_NEAR(J2(0, 0), 0.5 * J1(0, 0), 1e-12);
  EXPECT_NEAR(J2(1, 1), 0.5 * J1(1, 1), 1e-12);

  std::mt19937_64 rng(6);
  const double h = 1e-5;
  for (int k = 0; k < 100; ++k) {
    const Vec2 xy = random_vec3(rng, -2, 2).head<2>();
    const Vec3 q = Vec3(xy.x(), xy.y(), 1.0) * (0.5 + 4.0 * std::abs(random_vec3(rng)[0]));
    const Mat23 Ja = projection_jacobian(K, q);
    for (int c = 0; c < 3; ++c) {
      Vec3 qp = q, qm = q;
      qp[c] += h;
      qm[c] -= h;
      const Vec2 fd = (project(K, qp) - project(K, qm)) / (2 * h);
      for (int r = 0; r < 2; ++r) {
        EXPECT_LE(magsplat::testing::rel_err(Ja(r, c), fd[r], 1e-3), 1e-5) << r << "," << c;
      }
    }
  }
  EXPECT_THROW(projection_jacobian(K, Vec3(0, 0, 0)), Error);
}

TEST(Umeyama, IdentityAndRecovery) {
  std::mt19937_64 rng(7);
  std::vector<Vec3> src;
  for (int i = 0; i < 20; ++i) src.push_back(random_vec3(rng, -3, 3));
  const Sim3 id = umeyama_sim3(src, src);
  EXPECT_NEAR(id.scale, 1.0, 1e-12);
  EXPECT_NEAR(id.rotation.angle(), 0.0, 1e-7);
  EXPECT_NEAR(id.translation.norm(), 0.0, 1e-12);

  for (int trial = 0; trial < 20; ++trial) {
    Sim3 S;
    S.scale = 0.3 + 3.0 * std::abs(random_vec3(rng)[0]);
    S.rotation = random_unit_quat(rng);
    S.translation = random_vec3(rng, -10, 10);
    std::vector<Vec3> dst;
    for (const Vec3& p : src) dst.push_back(S.apply(p));
    const Sim3 R = umeyama_sim3(src, dst);
    EXPECT_NEAR(R.scale, S.scale, 1e-9);
    EXPECT_NEAR((R.translation - S.translation).norm(), 0.0, 1e-9);
    EXPECT_NEAR((R.rotation.to_matrix() - S.rotation.to_matrix()).norm(), 0.0, 1e-9);
  }
}

TEST(Umeyama, CollinearIsDegenerate) {
  std::vector<Vec3> src{{0, 0, 0}, {1, 1, 1}, {2, 2, 2}};
  std::vector<Vec3> dst{{1, 0, 0}, {2, 1, 1}, {3, 2, 2}};
  try {
    umeyama_sim3(src, dst);
    FAIL() << "expected DegenerateConfiguration";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateConfiguration);
  }
}

namespace {

std::vector<SE3> arc_trajectory(int n) {
  std::vector<SE3> poses;
  for (int i = 0; i < n; ++i) {
    const double a = 0.2 * i;
    poses.push_back(SE3{Quaternion::from_axis_angle(Vec3(0.1, 1, 0.2), 0.05 * i),
                        Vec3(std::cos(a), 0.3 * std::sin(2 * a), std::sin(a) + 0.1 * i)});
  }
  return poses;
}

}  // namespace

TEST(TrajectoryMetrics, ZeroForIdenticalAndInvariantUnderSim3) {
  const auto gt = arc_trajectory(12);
  const auto m0 = trajectory_metrics(gt, gt);
  EXPECT_NEAR(m0.ate, 0.0, 1e-9);
  EXPECT_NEAR(m0.rpe_trans, 0.0, 1e-9);
  EXPECT_NEAR(m0.rpe_rot, 0.0, 1e-6);

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Sim3 S{0.5 + 2.0 * std::abs(random_vec3(rng)[0]), random_unit_quat(rng), random_vec3(rng, -5, 5)};
    std::vector<SE3> est;
    for (const SE3& p : gt) est.push_back(S.apply(p));
    const auto m = trajectory_metrics(est, gt);
    EXPECT_NEAR(m.ate, 0.0, 1e-9);
    EXPECT_NEAR(m.rpe_trans, 0.0, 1e-9);
    EXPECT_NEAR(m.rpe_rot, 0.0, 1e-5);
  }
}

TEST(TrajectoryMetrics, AteMatchesDirectRmseAfterAlignment) {
  auto gt = arc_trajectory(10);
  auto est = gt;
  est[4].translation += Vec3(0.05, -0.02, 0.01);
  // Direct oracle: Umeyama on positions, then RMSE.
  std::vector<Vec3> ps, pg;
  for (size_t i = 0; i < gt.size(); ++i) {
    ps.push_back(est[i].translation);
    pg.push_back(gt[i].translation);
  }
  const Sim3 S = umeyama_sim3(ps, pg);
  double se = 0;
  for (size_t i = 0; i < gt.size(); ++i) se += (S.apply(ps[i]) - pg[i]).squaredNorm();
  const double expected = std::sqrt(se / gt.size());
  const auto m = trajectory_metrics(est, gt);
  EXPECT_NEAR(m.ate, expected, 1e-12);
  EXPECT_GT(m.ate, 0.0);
  EXPECT_THROW(trajectory_metrics(std::span(est).first(5), gt), Error);
}

TEST(TrajectoryFile, RoundTrip) {
  const auto gt = arc_trajectory(5);
  std::vector<StampedPose> sp;
  for (size_t i = 0; i < gt.size(); ++i) sp.push_back({static_cast<double>(i), gt[i]});
  const auto path = (std::filesystem::temp_directory_path() / "magsplat_traj_test.txt").string();
  write_trajectory(path, sp);
  const auto back = read_trajectory(path);
  ASSERT_EQ(back.size(), sp.size());
  for (size_t i = 0; i < sp.size(); ++i) {
    EXPECT_EQ(back[i].t, sp[i].t);
    EXPECT_EQ(back[i].pose.translation, sp[i].pose.translation);
    EXPECT_NEAR(back[i].pose.rotation.w, sp[i].pose.rotation.w, 1e-15);
  }
  std::remove(path.c_str());
}

TEST(Quaternion, ProductMatricesMatchHamiltonProduct) {
  std::mt19937_64 rng(40);
  for (int k = 0; k < 50; ++k) {
    const Quaternion a = Quaternion::from_coeffs(2.0 * random_unit_quat(rng).coeffs());
    const Quaternion b = random_unit_quat(rng);
    const Vec4 ab = (a * b).coeffs();
    EXPECT_LE((quat_left_matrix(a) * b.coeffs() - ab).norm(), 1e-14);
    EXPECT_LE((quat_right_matrix(b) * a.coeffs() - ab).norm(), 1e-14);
  }
}

TEST(Quaternion, RotationMatrixVjpMatchesFiniteDifferences) {
  std::mt19937_64 rng(41);
  const Quaternion q = random_unit_quat(rng);
  Mat3 G;
  G << 0.3, -1.0, 0.2, 0.7, 0.1, -0.4, 0.9, 0.5, -0.6;
  const Vec4 g = rotation_matrix_vjp(G, q.coeffs());
  const double h = 1e-6;
  for (int c = 0; c < 4; ++c) {
    Vec4 qp = q.coeffs(), qm = qp;
    qp[c] += h;
    qm[c] -= h;
    const double fd = (Quaternion::from_coeffs(qp).to_matrix() - Quaternion::from_coeffs(qm).to_matrix())
                          .cwiseProduct(G).sum() / (2 * h);
    EXPECT_NEAR(g[c], fd, 1e-8);
  }
}
