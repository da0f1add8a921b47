#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <Eigen/Dense>

#include "magsplat/pose.hpp"
#include "magsplat/synthetic.hpp"
#include "ba_support.hpp"
#include "test_support.hpp"

using namespace magsplat;
using magsplat::testing::make_ba;
using magsplat::testing::rel_err;
using magsplat::testing::test_camera;

namespace {

FrameObservations blank_frame(int w, int h) {
  FrameObservations f;
  f.image = Image(w, h, 3, 0.0);
  f.pointmap = Image(w, h, 3, 0.0);
  f.confidence = Raster<double>(w, h, 1, 0.0);
  f.depth = Raster<double>(w, h, 1, 1.0);
  f.motion_mask = Mask(w, h, 1, 0);
  f.initial_dyn_confidence = Raster<double>(w, h, 1, 0.0);
  return f;
}

double rot_err_deg(const SE3& a, const SE3& b) {
  return (a.rotation * b.rotation.conjugate()).angle() * 180.0 / std::numbers::pi;
}

// Non-coplanar points inside the camera frustum, expressed in world frame.
std::vector<Correspondence> make_corrs(const SE3& pose, const CameraIntrinsics& K, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux(0.0, K.width - 1.0), uy(0.0, K.height - 1.0), uz(2.0, 6.0);
  const SE3 c2w = pose.inverse();
  std::vector<Correspondence> out;
  for (int i = 0; i < n; ++i) {
    Correspondence c;
    c.pixel = Vec2(ux(rng), uy(rng));
    c.world_point = c2w.apply(unproject(K, c.pixel, uz(rng)));
    out.push_back(c);
  }
  return out;
}

SE3 test_pose(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return SE3{Quaternion::exp(Vec3(n(rng), n(rng), n(rng)) * 0.3), Vec3(n(rng), n(rng), n(rng)) * 0.5};
}

}  // namespace

TEST(Filtering, ExhaustiveFourByFour) {
  FrameObservations f = blank_frame(4, 4);
  FilterConfig cfg{0.5, 3.0};
  // Five pixels pass both tests; others fail one of them, some exactly at the threshold.
  const std::set<std::pair<int, int>> expected = {{0, 0}, {3, 0}, {1, 1}, {2, 2}, {0, 3}};
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const bool pass = expected.count({x, y}) > 0;
      f.confidence.at(x, y) = pass ? 0.9 : ((x + y) % 2 ? 0.5 : 0.9);
      f.depth.at(x, y) = pass ? 1.0 : ((x + y) % 2 ? 1.0 : 3.0);
    }
  }
  const auto got = filter_points(f, cfg);
  ASSERT_EQ(got.size(), 5u);
  for (const auto& p : got) EXPECT_TRUE(expected.count({p.x, p.y}));
  EXPECT_TRUE(std::is_sorted(got.begin(), got.end(), [](const Pixel& a, const Pixel& b) {
    return a.y != b.y ? a.y < b.y : a.x < b.x;
  }));
}

TEST(Filtering, TrivialCases) {
  FrameObservations f = blank_frame(5, 3);
  EXPECT_TRUE(filter_points(f, FilterConfig{0.1, 10.0}).empty());
  for (auto& c : f.confidence.data) c = 1.0;
  EXPECT_EQ(filter_points(f, FilterConfig{0.1, 1e9}).size(), 15u);
  EXPECT_THROW(FilterConfig({-1.0, 1.0}).validate(), Error);
  EXPECT_THROW(FilterConfig({0.0, 0.0}).validate(), Error);
}

TEST(Prompts, ArgmaxUniformAndSortOracle) {
  Raster<double> c(6, 5, 1, 0.0);
  c.at(4, 3) = 1.0;
  auto p = select_prompts(c, 1);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0], (Pixel{4, 3}));

  Raster<double> u(6, 5, 1, 0.3);
  p = select_prompts(u, 3);
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p[0], (Pixel{0, 0}));
  EXPECT_EQ(p[1], (Pixel{1, 0}));
  EXPECT_EQ(p[2], (Pixel{2, 0}));

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> level(0, 9);
  for (int trial = 0; trial < 20; ++trial) {
    Raster<double> r(7, 6, 1, 0.0);
    for (auto& v : r.data) v = level(rng) / 10.0;  // many ties
    std::vector<std::pair<double, int>> all;
    for (int i = 0; i < 42; ++i) all.push_back({-r.data[i], i});
    std::sort(all.begin(), all.end());
    const auto got = select_prompts(r, 5);
    for (int k = 0; k < 5; ++k) EXPECT_EQ(got[k].y * 7 + got[k].x, all[k].second);
  }
  EXPECT_EQ(select_prompts(Raster<double>(2, 2, 1, 0.0), 10).size(), 4u);
  EXPECT_THROW(select_prompts(c, 0), Error);
}

TEST(FuseMasks, TrivialAndCrafted) {
  Raster<double> conf(8, 8, 1, 0.2);
  const Mask none = fuse_masks({}, conf, 0.5);
  EXPECT_TRUE(std::all_of(none.data.begin(), none.data.end(), [](auto v) { return v == 0; }));

  // Segment A: 2x2 block with mean 0.7 (one pixel 0.4). Segment B: 3x3 block
  // with mean < 0.5 but one pixel at 0.9. A lone confident pixel elsewhere.
  Mask a(8, 8, 1, 0), b(8, 8, 1, 0);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      a.at(x, y) = 1;
      conf.at(x, y) = 0.8;
    }
  conf.at(1, 1) = 0.4;
  for (int y = 4; y < 7; ++y)
    for (int x = 4; x < 7; ++x) b.at(x, y) = 1;
  conf.at(5, 5) = 0.9;
  conf.at(7, 0) = 0.6;
  const std::vector<Mask> segs = {a, b};
  const Mask m = fuse_masks(segs, conf, 0.5);
  std::set<std::pair<int, int>> expected = {{0, 0}, {1, 0}, {0, 1}, {1, 1}, {5, 5}, {7, 0}};
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) EXPECT_EQ(m.at(x, y) != 0, expected.count({x, y}) > 0) << x << "," << y;
}

TEST(StaticSet, SetDifference) {
  Mask m(4, 4, 1, 0);
  std::vector<Pixel> S = {{0, 0}, {1, 2}, {3, 3}, {2, 1}};
  EXPECT_EQ(static_set(S, m).size(), 4u);
  m.at(1, 2) = 1;
  m.at(3, 3) = 1;
  m.at(0, 1) = 1;
  const auto got = static_set(S, m);
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0], (Pixel{0, 0}));
  EXPECT_EQ(got[1], (Pixel{2, 1}));
  for (auto& v : m.data) v = 1;
  EXPECT_TRUE(static_set(S, m).empty());
}

TEST(Segmenter, OracleReturnsPromptedComponents) {
  Mask ref(6, 4, 1, 0);
  ref.at(0, 0) = ref.at(1, 0) = ref.at(0, 1) = 1;  // component 1
  ref.at(4, 2) = ref.at(5, 2) = ref.at(5, 3) = 1;  // component 2
  ref.at(3, 0) = 1;                                // component 3
  EXPECT_EQ(connected_components(ref).size(), 3u);
  OracleSegmenter seg({ref});
  const Image img(6, 4, 3, 0.0);
  const std::vector<Pixel> prompts = {{5, 3}, {2, 2}};
  const auto out = seg.segment(0, img, prompts);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].at(4, 2), 1);
  EXPECT_EQ(out[0].at(0, 0), 0);
  EXPECT_THROW(seg.segment(1, img, prompts), Error);
}

TEST(Pnp, NoiselessRecovery) {
  const auto K = test_camera(64, 48, 50.0);
  for (int seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const SE3 gt = test_pose(rng);
    const auto corrs = make_corrs(gt, K, 100, rng);
    const auto res = pnp_ransac(corrs, K, RansacConfig{});
    EXPECT_LT(rot_err_deg(res.pose, gt), 1e-4);
    EXPECT_LT((res.pose.translation - gt.translation).norm(), 1e-6);
    EXPECT_EQ(res.inliers.size(), 100u);
  }
}

TEST(Pnp, CoherentOutliers) {
  const auto K = test_camera(64, 48, 50.0);
  std::mt19937_64 rng(7);
  const SE3 gt = test_pose(rng);
  auto corrs = make_corrs(gt, K, 100, rng);
  // The last 40 points belong to an object that moved rigidly.
  const SE3 motion{Quaternion::exp(Vec3(0.0, 0.2, 0.0)), Vec3(0.3, 0.0, 0.1)};
  Mask mask(100, 1, 1, 0);
  std::vector<Pixel> S;
  for (int i = 0; i < 100; ++i) {
    S.push_back({i, 0});
    if (i >= 60) {
      corrs[i].world_point = motion.inverse().apply(corrs[i].world_point);
      mask.at(i, 0) = 1;
    }
  }
  std::vector<Correspondence> kept;
  for (const auto& p : static_set(S, mask)) kept.push_back(corrs[p.x]);
  const std::vector<Correspondence> static_only(corrs.begin(), corrs.begin() + 60);
  const auto a = pnp_ransac(kept, K, RansacConfig{});
  const auto b = pnp_ransac(static_only, K, RansacConfig{});
  EXPECT_EQ(a.pose.translation, b.pose.translation);
  EXPECT_EQ(a.pose.rotation.coeffs(), b.pose.rotation.coeffs());
  EXPECT_LT(rot_err_deg(a.pose, gt), 1e-4);
  EXPECT_LT((a.pose.translation - gt.translation).norm(), 1e-6);

  // Without the mask RANSAC still finds the static majority.
  const auto c = pnp_ransac(corrs, K, RansacConfig{});
  EXPECT_EQ(c.inliers.size(), 60u);
  EXPECT_LT((c.pose.translation - gt.translation).norm(), 1e-6);
}

TEST(Pnp, DeterministicGivenSeed) {
  const auto K = test_camera(64, 48, 50.0);
  std::mt19937_64 rng(9);
  const SE3 gt = test_pose(rng);
  auto corrs = make_corrs(gt, K, 80, rng);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& c : corrs) c.pixel += Vec2(n(rng), n(rng));
  RansacConfig cfg;
  cfg.seed = 42;
  const auto a = pnp_ransac(corrs, K, cfg), b = pnp_ransac(corrs, K, cfg);
  EXPECT_EQ(a.pose.translation, b.pose.translation);
  EXPECT_EQ(a.inliers, b.inliers);
}

TEST(Pnp, Errors) {
  const auto K = test_camera(64, 48, 50.0);
  std::mt19937_64 rng(1);
  const auto corrs = make_corrs(SE3::identity(), K, 5, rng);
  try {
    pnp_ransac(corrs, K, RansacConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientCorrespondences);
  }
  RansacConfig bad;
  bad.min_sample = 5;
  EXPECT_THROW(bad.validate(), Error);
  EXPECT_THROW(refine_pose_gn(SE3::identity(), {}, K, 5), Error);

  // Random pixels: nothing agrees.
  auto noise = make_corrs(SE3::identity(), K, 60, rng);
  std::shuffle(noise.begin(), noise.end(), rng);
  std::uniform_real_distribution<double> ux(0.0, 63.0);
  for (auto& c : noise) c.pixel = Vec2(ux(rng), ux(rng) * 0.75);
  try {
    pnp_ransac(noise, K, RansacConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoConsensus);
  }
}

TEST(Pnp, ResidualJacobianMatchesFiniteDifferences) {
  const auto K = test_camera(64, 48, 50.0);
  std::mt19937_64 rng(21);
  const SE3 pose = test_pose(rng);
  const auto corrs = make_corrs(pose, K, 10, rng);
  const double h = 1e-6;
  for (const auto& c : corrs) {
    Eigen::Matrix<double, 2, 6> J;
    reprojection_residual(pose, c, K, &J);
    for (int k = 0; k < 6; ++k) {
      Vec6 d = Vec6::Zero();
      d[k] = h;
      const Vec2 fd = (reprojection_residual(compose(SE3::exp(d), pose), c, K) -
                       reprojection_residual(compose(SE3::exp(-d), pose), c, K)) / (2 * h);
      for (int r = 0; r < 2; ++r) {
        if (std::abs(J(r, k)) < 1e-6 && std::abs(fd[r]) < 1e-6) continue;
        EXPECT_LT(rel_err(J(r, k), fd[r]), 1e-4) << r << "," << k;
      }
    }
  }
}

TEST(Pnp, GaussNewtonFixedPointAndConvergence) {
  const auto K = test_camera(64, 48, 50.0);
  std::mt19937_64 rng(5);
  const SE3 gt = test_pose(rng);
  const auto corrs = make_corrs(gt, K, 50, rng);
  const SE3 same = refine_pose_gn(gt, corrs, K, 10);
  EXPECT_LT((same.translation - gt.translation).norm(), 1e-12);
  EXPECT_LT(rot_err_deg(same, gt), 1e-10);

  const SE3 start = compose(SE3{Quaternion::from_axis_angle(Vec3(1, 2, 3).normalized(), std::numbers::pi / 180.0),
                                Vec3(0.01, -0.005, 0.007)},
                            gt);
  const double c0 = reprojection_cost(start, corrs, K);
  const SE3 got = refine_pose_gn(start, corrs, K, 10);
  EXPECT_LT(reprojection_cost(got, corrs, K), c0);
  EXPECT_LT((got.translation - gt.translation).norm(), 1e-6);
  EXPECT_LT(rot_err_deg(got, gt), 1e-6);
}

TEST(Pnp, RankDeficientThrows) {
  const auto K = test_camera(64, 48, 50.0);
  Correspondence c;
  c.world_point = Vec3(0.1, 0.2, 3.0);
  c.pixel = Vec2(30.0, 20.0);
  const std::vector<Correspondence> one = {c, c};
  try {
    refine_pose_gn(SE3::identity(), one, K, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingularNormalMatrix);
  }
}

TEST(Dba, ConsistentGeometryHasZeroCost) {
  std::mt19937_64 rng(1);
  const BAProblem pb = make_ba(3, 4, 4, rng, 0.0);
  const BACost c = dba_cost(pb);
  EXPECT_LT(c.cost, 1e-20);
  EXPECT_EQ(c.active, 6 * 16);
  const BAUpdate up = dba_step(pb, 1e-4);
  for (const auto& d : up.pose) EXPECT_LT(d.norm(), 1e-9);
  for (const auto& d : up.inv_depth)
    for (double v : d.data) EXPECT_LT(std::abs(v), 1e-9);
}

TEST(Dba, DynamicPixelsContributeNothing) {
  std::mt19937_64 rng(2);
  BAProblem pb = make_ba(3, 4, 4, rng, 1.0);
  EXPECT_GT(dba_cost(pb).cost, 0.0);
  pb.masks.assign(3, Mask(4, 4, 1, 1));
  const BACost c = dba_cost(pb);
  EXPECT_EQ(c.cost, 0.0);
  EXPECT_EQ(c.active, 0);
}

TEST(Dba, SinglePixelHandValue) {
  BAProblem pb;
  pb.K = CameraIntrinsics{100.0, 100.0, 0.5, 0.0, 2, 1};
  pb.poses = {SE3::identity(), SE3{Quaternion::identity(), Vec3(0.1, 0.0, 0.0)}};
  pb.inv_depths = {Raster<double>(2, 1, 1, 0.5), Raster<double>(2, 1, 1, 0.5)};
  BAEdge e;
  e.i = 0;
  e.j = 1;
  e.target = Image(2, 1, 2, 0.0);
  e.weight = Raster<double>(2, 1, 2, 0.0);
  e.target.at(1, 0, 0) = 6.5;
  e.target.at(1, 0, 1) = 0.25;
  e.weight.at(1, 0, 0) = 2.0;
  e.weight.at(1, 0, 1) = 4.0;
  pb.edges = {e};
  // X_i = (0.005, 0, 1) / 0.5 = (0.01, 0, 2); X_j = (0.11, 0, 2) projects to (6, 0).
  const BACost c = dba_cost(pb);
  EXPECT_NEAR(c.residuals[0].at(1, 0, 0), 0.5, 1e-12);
  EXPECT_NEAR(c.residuals[0].at(1, 0, 1), 0.25, 1e-12);
  EXPECT_NEAR(c.cost, 0.75, 1e-12);
  EXPECT_EQ(c.active, 1);
}

TEST(Dba, SchurMatchesDenseSolve) {
  for (int seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(50 + seed);
    const int frames = seed % 2 ? 3 : 2;
    BAProblem pb = make_ba(frames, 4, 4, rng, 1.0);
    if (seed == 4) {
      pb.masks.assign(frames, Mask(4, 4, 1, 0));
      pb.masks[1].at(2, 2) = 1;
      pb.masks[0].at(0, 3) = 1;
    }
    const double damping = seed == 0 ? 1e-6 : 1e-3 * seed;  // undamped, scale is a free direction
    const BAUpdate up = dba_step(pb, damping);
    const DenseLinearization lin = dba_linearize_dense(pb);
    const int np = 6 * (frames - 1);
    Eigen::MatrixXd Hm = lin.J.transpose() * lin.J;
    for (int k = 0; k < Hm.rows(); ++k) Hm(k, k) = k < np ? Hm(k, k) + damping : Hm(k, k) * (1.0 + damping);
    const Eigen::VectorXd x = Hm.ldlt().solve(-lin.J.transpose() * lin.r);
    for (int f = 1; f < frames; ++f)
      for (int k = 0; k < 6; ++k) EXPECT_NEAR(up.pose[f][k], x[6 * (f - 1) + k], 1e-8);
    EXPECT_EQ(up.pose[0], Vec6::Zero());
    for (int f = 0; f < frames; ++f)
      for (int p = 0; p < 16; ++p) {
        const int col = lin.depth_columns[f * 16 + p];
        EXPECT_NEAR(up.inv_depth[f].data[p], col >= 0 ? x[col] : 0.0, 1e-8);
      }
  }
}

TEST(Dba, OneDampedStepDecreasesCost) {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(200 + seed);
    BAProblem pb = make_ba(3, 6, 5, rng, 1.0);
    const double before = dba_cost(pb).cost;
    const SE3 gauge = pb.poses[0];
    apply_update(pb, dba_step(pb, 1e-4));
    EXPECT_LT(dba_cost(pb).cost, before) << seed;
    EXPECT_EQ(pb.poses[0].translation, gauge.translation);
    EXPECT_EQ(pb.poses[0].rotation.coeffs(), gauge.rotation.coeffs());
  }
}

TEST(Dba, WorkerCountDoesNotChangeTheStep) {
  std::mt19937_64 rng(8);
  const BAProblem pb = make_ba(3, 5, 4, rng, 1.0);
  const BAUpdate a = dba_step(pb, 1e-4, 1), b = dba_step(pb, 1e-4, 3);
  for (int f = 0; f < 3; ++f) {
    EXPECT_EQ(a.pose[f], b.pose[f]);
    EXPECT_EQ(a.inv_depth[f].data, b.inv_depth[f].data);
  }
}

TEST(Dba, ValidationErrors) {
  std::mt19937_64 rng(3);
  BAProblem pb = make_ba(2, 3, 3, rng, 0.0);
  pb.edges[0].j = 5;
  EXPECT_THROW(pb.validate(), Error);
  pb = make_ba(2, 3, 3, rng, 0.0);
  pb.inv_depths[1].data[0] = -1.0;
  EXPECT_THROW(pb.validate(), Error);
}

TEST(MaBa, EdgePairs) {
  const auto e = ba_edge_pairs(4);
  const std::vector<std::pair<int, int>> want = {{0, 1}, {1, 0}, {1, 2}, {2, 1}, {2, 3},
                                                 {3, 2}, {0, 2}, {2, 0}, {1, 3}, {3, 1}};
  EXPECT_EQ(e, want);
}

TEST(MaBa, StaticSequenceRecoversPoses) {
  SyntheticSceneSpec spec;
  spec.width = 40;
  spec.height = 30;
  spec.frames = 8;
  spec.dynamic = false;
  spec.surface_spacing = 0.15;
  const auto seq = generate_synthetic_scene(spec, 1);
  const auto res = run_ma_ba(seq.observations, MaBaConfig{}, nullptr);
  const auto m = trajectory_metrics(invert_poses(res.poses), invert_poses(seq.poses));
  EXPECT_LT(m.ate, 1e-6);
  for (const auto& mask : res.masks)
    for (auto v : mask.data) EXPECT_EQ(v, 0);

  SequenceObservations one = seq.observations;
  one.frames.resize(1);
  EXPECT_THROW(run_ma_ba(one, MaBaConfig{}, nullptr), Error);
}
