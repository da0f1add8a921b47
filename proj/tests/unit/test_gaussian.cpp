#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "magsplat/gaussian.hpp"
#include "test_support.hpp"

using namespace magsplat;
using magsplat::testing::random_unit_quat;
using magsplat::testing::random_vec3;

TEST(Covariance, Examples) {
  EXPECT_TRUE(assemble_covariance(Quaternion::identity(), Vec3(1, 1, 1)).isApprox(Mat3::Identity()));
  const Mat3 expected = Vec3(4, 1, 1).asDiagonal();
  EXPECT_TRUE(assemble_covariance(Quaternion::identity(), Vec3(2, 1, 1)).isApprox(expected));
  EXPECT_THROW(assemble_covariance(Quaternion::identity(), Vec3(1, 0, 1)), Error);
}

TEST(Covariance, EigenvaluesAreSquaredScalesAndSpd) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.01, 3.0);
  for (int k = 0; k < 200; ++k) {
    const Vec3 s(u(rng), u(rng), u(rng));
    const Mat3 cov = assemble_covariance(random_unit_quat(rng), s);
    EXPECT_LE((cov - cov.transpose()).norm(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    Vec3 ev = es.eigenvalues();
    Vec3 s2 = s.cwiseProduct(s);
    std::sort(s2.data(), s2.data() + 3);
    EXPECT_LE((ev - s2).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(Eigen::LLT<Mat3>(cov).info(), Eigen::Success);
  }
}

TEST(SphericalHarmonics, DegreeZeroIsConstant) {
  std::vector<double> sh{1.0, -2.0, 0.5};
  std::mt19937_64 rng(12);
  const Vec3 first = eval_sh_raw(sh, 0, Vec3::UnitZ());
  EXPECT_NEAR(first[0], 0.2820947918 * 1.0, 1e-10);
  EXPECT_NEAR(first[1], 0.2820947918 * -2.0, 1e-10);
  EXPECT_NEAR(first[2], 0.2820947918 * 0.5, 1e-10);
  for (int k = 0; k < 20; ++k) {
    const Vec3 v = random_vec3(rng).normalized();
    EXPECT_EQ(eval_sh_raw(sh, 0, v), first);
  }
}

TEST(SphericalHarmonics, DegreeOneMatchesDirectBasisSum) {
  // Real SH, l = 1: Y_{1,-1} = -sqrt(3/4pi) y, Y_{1,0} = sqrt(3/4pi) z,
  // Y_{1,1} = -sqrt(3/4pi) x (Condon-Shortley phase).
  const double c0 = 0.5 * std::sqrt(1.0 / M_PI);
  const double c1 = std::sqrt(3.0 / (4.0 * M_PI));
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> sh(12);
    for (double& c : sh) c = random_vec3(rng)[0];
    const Vec3 v = random_vec3(rng).normalized();
    const Vec3 got = eval_sh_raw(sh, 1, v);
    for (int ch = 0; ch < 3; ++ch) {
      const double expected = c0 * sh[ch] - c1 * v.y() * sh[3 + ch] + c1 * v.z() * sh[6 + ch] -
                              c1 * v.x() * sh[9 + ch];
      EXPECT_NEAR(got[ch], expected, 1e-12);
    }
  }
}

TEST(SphericalHarmonics, OffsetAndClamp) {
  std::vector<double> sh(3, 0.0);
  EXPECT_EQ(eval_sh(sh, 0, Vec3::UnitX()), Vec3::Constant(0.5));
  set_sh_from_rgb(sh, 0, Vec3(0.1, 0.9, 0.25));
  EXPECT_LE((eval_sh(sh, 0, Vec3::UnitY()) - Vec3(0.1, 0.9, 0.25)).norm(), 1e-12);
  sh[0] = 100.0;
  EXPECT_EQ(eval_sh(sh, 0, Vec3::UnitY())[0], 1.0);
}

TEST(SphericalHarmonics, BasisGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(14);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3 v = random_vec3(rng).normalized();
    ShBasis b;
    std::array<Vec3, 16> db;
    sh_basis_with_gradient(3, v, b, db);
    for (int c = 0; c < 3; ++c) {
      Vec3 vp = v, vm = v;
      vp[c] += h;
      vm[c] -= h;
      const ShBasis bp = sh_basis(3, vp), bm = sh_basis(3, vm);
      for (int k = 0; k < 16; ++k) EXPECT_NEAR(db[k][c], (bp[k] - bm[k]) / (2 * h), 1e-7);
    }
  }
}

namespace {

GaussianPrimitive iso_primitive(const Vec3& mu, double s, double opacity) {
  GaussianPrimitive g;
  g.mu = mu;
  g.s = Vec3::Constant(s);
  g.opacity = opacity;
  g.sh.assign(3 * sh_coeff_count(1), 0.0);
  return g;
}

}  // namespace

TEST(ProjectGaussian, IsotropicOnAxis) {
  const CameraIntrinsics K{80, 80, 32, 32, 64, 64};
  const double z = 4.0, f = 80.0;
  const auto sg = project_gaussian(iso_primitive(Vec3(0, 0, z), 1.0, 0.5), 1, SE3::identity(), K);
  ASSERT_TRUE(sg.has_value());
  const double expected = (f / z) * (f / z) + 0.3;
  EXPECT_NEAR(sg->sigma2d(0, 0), expected, 1e-9);
  EXPECT_NEAR(sg->sigma2d(1, 1), expected, 1e-9);
  EXPECT_NEAR(sg->sigma2d(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(sg->mu2d.x(), 32.0, 1e-12);
  EXPECT_DOUBLE_EQ(sg->depth, z);
}

TEST(ProjectGaussian, CullsBehindCameraAndOffscreen) {
  const CameraIntrinsics K{80, 80, 32, 32, 64, 64};
  EXPECT_FALSE(project_gaussian(iso_primitive(Vec3(0, 0, -2), 0.1, 0.5), 1, SE3::identity(), K));
  EXPECT_FALSE(project_gaussian(iso_primitive(Vec3(50, 0, 2), 0.1, 0.5), 1, SE3::identity(), K));
}

TEST(ProjectGaussian, SymmetricAndConsistentWithComposition) {
  std::mt19937_64 rng(15);
  const CameraIntrinsics K{90, 85, 31.5, 30.0, 64, 60};
  int checked = 0;
  for (int k = 0; k < 1000; ++k) {
    GaussianPrimitive g = iso_primitive(random_vec3(rng, -2, 2) + Vec3(0, 0, 6), 0.3, 0.5);
    g.q = random_unit_quat(rng);
    g.s = random_vec3(rng, 0.01, 0.5);
    const SE3 pose{Quaternion::from_axis_angle(random_vec3(rng), 0.2 * random_vec3(rng)[0]),
                   random_vec3(rng, -0.3, 0.3)};
    const auto sg = project_gaussian(g, 1, pose, K);
    if (!sg) continue;
    ++checked;
    EXPECT_EQ(sg->sigma2d(0, 1), sg->sigma2d(1, 0));
    const Vec3 pc = pose.apply(g.mu);
    const Mat23 J = projection_jacobian(K, pc);
    const Mat3 Wr = pose.rotation_matrix();
    const Mat2 expected = J * Wr * assemble_covariance(g.q, g.s) * Wr.transpose() * J.transpose() +
                          0.3 * Mat2::Identity();
    EXPECT_LE((sg->sigma2d - expected).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((sg->mu2d - project(K, pc)).norm(), 1e-12);
  }
  EXPECT_GT(checked, 500);
}

TEST(EvalAlpha, Examples) {
  SplattedGaussian sg;
  sg.mu2d = Vec2(10, 10);
  sg.sigma2d << 4.0, 0.0, 0.0, 4.0;
  sg.opacity = 0.7;
  EXPECT_DOUBLE_EQ(eval_alpha(sg, sg.mu2d), 0.7);
  sg.opacity = 1.0;
  EXPECT_DOUBLE_EQ(eval_alpha(sg, sg.mu2d), 0.99);
  // d = (2, 0) with variance 4: Mahalanobis quadratic form = 1.
  EXPECT_NEAR(eval_alpha(sg, Vec2(12, 10)), 0.60653065971263342, 1e-15);
  sg.opacity = 0.0;
  EXPECT_EQ(eval_alpha(sg, Vec2(11, 9)), 0.0);
  sg.sigma2d << 1e-7, 0.0, 0.0, 1e-7;
  EXPECT_THROW(eval_alpha(sg, Vec2(0, 0)), Error);
}

TEST(EvalAlpha, MonotoneInMahalanobisDistance) {
  SplattedGaussian sg;
  sg.mu2d = Vec2(0, 0);
  sg.sigma2d << 3.0, 1.0, 1.0, 2.0;
  sg.opacity = 0.8;
  const Vec2 dir(0.6, -0.8);
  double prev = 1.0;
  for (int k = 0; k < 100; ++k) {
    const double a = eval_alpha(sg, dir * (0.1 * k));
    EXPECT_LE(a, prev);
    EXPECT_GE(a, 0.0);
    prev = a;
  }
}

TEST(SceneContainer, RoundTripAndBadMagic) {
  std::mt19937_64 rng(16);
  GaussianScene scene = magsplat::testing::random_scene(rng, 25, 2);
  scene.primitives[3].dynamic_label = true;
  const auto bytes = encode_scene(scene);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MGS1");
  const GaussianScene back = decode_scene(bytes);
  ASSERT_EQ(back.size(), scene.size());
  EXPECT_EQ(back.sh_degree, 2);
  for (size_t i = 0; i < scene.size(); ++i) {
    EXPECT_EQ(back.primitives[i].mu, scene.primitives[i].mu);
    EXPECT_EQ(back.primitives[i].sh, scene.primitives[i].sh);
    EXPECT_EQ(back.primitives[i].dynamic_label, scene.primitives[i].dynamic_label);
  }
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_scene(bad), Error);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 10);
  EXPECT_THROW(decode_scene(truncated), Error);
}
