#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "magsplat/pose.hpp"
#include "magsplat/synthetic.hpp"

using namespace magsplat;

namespace {

SyntheticSceneSpec small_spec() {
  SyntheticSceneSpec s;
  s.width = 40;
  s.height = 30;
  s.frames = 6;
  s.surface_spacing = 0.15;
  return s;
}

}  // namespace

TEST(Synthetic, PointmapMatchesDepth) {
  const auto seq = generate_synthetic_scene(small_spec(), 3);
  const auto& K = seq.observations.K;
  double worst = 0.0;
  for (int t = 0; t < seq.frame_count(); ++t) {
    const auto& f = seq.observations.frames[t];
    for (int y = 0; y < K.height; ++y) {
      for (int x = 0; x < K.width; ++x) {
        const Vec3 X(f.pointmap.at(x, y, 0), f.pointmap.at(x, y, 1), f.pointmap.at(x, y, 2));
        const Vec3 from_depth = unproject(K, Vec2(x, y), f.depth.at(x, y));
        worst = std::max(worst, (seq.poses[t].apply(X) - from_depth).norm());
      }
    }
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Synthetic, StaticSpecHasEmptyMasks) {
  auto spec = small_spec();
  spec.dynamic = false;
  const auto seq = generate_synthetic_scene(spec, 0);
  for (const auto& m : seq.masks) {
    EXPECT_TRUE(std::all_of(m.data.begin(), m.data.end(), [](auto v) { return v == 0; }));
  }
  for (const auto& f : seq.observations.frames) {
    EXPECT_TRUE(std::all_of(f.motion_mask.data.begin(), f.motion_mask.data.end(), [](auto v) { return v == 0; }));
  }
  EXPECT_EQ(dynamic_coverage(seq), 0.0);
}

TEST(Synthetic, MasksAreTheObjectFootprint) {
  const auto seq = generate_synthetic_scene(small_spec(), 0);
  EXPECT_GT(dynamic_coverage(seq), 0.0);
  for (int t = 0; t < seq.frame_count(); ++t) {
    const auto& m = seq.masks[t];
    const auto& obs = seq.observations.frames[t];
    EXPECT_EQ(m.data, obs.motion_mask.data);
    // Masked pixels lie on the moved object.
    const SE3 back = seq.object_motion[t].inverse();
    for (int y = 0; y < m.height; ++y) {
      for (int x = 0; x < m.width; ++x) {
        if (!m.at(x, y)) continue;
        const Vec3 X(obs.pointmap.at(x, y, 0), obs.pointmap.at(x, y, 1), obs.pointmap.at(x, y, 2));
        const Vec3 local = back.apply(X) - small_spec().object_center;
        EXPECT_LE(local.cwiseAbs().maxCoeff(), small_spec().object_half_extent.maxCoeff() + 1e-9);
      }
    }
  }
}

// Ground-truth poses and depths make every static flow residual vanish.
TEST(Synthetic, FlowSatisfiesReprojectionIdentity) {
  const auto seq = generate_synthetic_scene(small_spec(), 1);
  BAProblem p;
  p.K = seq.observations.K;
  p.poses = seq.poses;
  p.masks = seq.masks;
  for (const auto& f : seq.observations.frames) {
    Raster<double> rho(f.depth.width, f.depth.height, 1);
    for (size_t k = 0; k < rho.data.size(); ++k) rho.data[k] = 1.0 / f.depth.data[k];
    p.inv_depths.push_back(std::move(rho));
  }
  ASSERT_EQ(seq.observations.flows.size(), ba_edge_pairs(seq.frame_count()).size());
  for (const auto& fl : seq.observations.flows) {
    BAEdge e;
    e.i = fl.from;
    e.j = fl.to;
    e.target = Image(fl.flow.width, fl.flow.height, 2);
    e.weight = Raster<double>(fl.flow.width, fl.flow.height, 2);
    for (int y = 0; y < fl.flow.height; ++y) {
      for (int x = 0; x < fl.flow.width; ++x) {
        e.target.at(x, y, 0) = x + fl.flow.at(x, y, 0);
        e.target.at(x, y, 1) = y + fl.flow.at(x, y, 1);
        e.weight.at(x, y, 0) = e.weight.at(x, y, 1) = fl.confidence.at(x, y);
      }
    }
    p.edges.push_back(std::move(e));
  }
  const BACost c = dba_cost(p);
  EXPECT_GT(c.active, 0);
  double worst = 0.0;
  for (size_t k = 0; k < c.residuals.size(); ++k) {
    for (size_t q = 0; q < c.residuals[k].data.size(); ++q) {
      if (p.edges[k].weight.data[q] > 0.0) worst = std::max(worst, std::abs(c.residuals[k].data[q]));
    }
  }
  EXPECT_LT(worst, 1e-6);
}

// Room splats must not sit in front of the lens; every visible point is
// farther than the sampling cut-off.
TEST(Synthetic, VisibleSurfacesAreSampled) {
  const auto seq = generate_synthetic_scene(small_spec(), 0);
  for (const auto& f : seq.observations.frames) {
    for (int y = 0; y < f.pointmap.height; ++y) {
      for (int x = 0; x < f.pointmap.width; ++x) EXPECT_GE(f.pointmap.at(x, y, 2), 1.5);
    }
  }
  for (const auto& g : seq.scene.primitives) EXPECT_GE(g.mu.z(), 1.5);
}

TEST(Synthetic, Deterministic) {
  auto spec = small_spec();
  spec.pointmap_noise = 0.01;
  spec.flow_noise = 0.2;
  const auto a = generate_synthetic_scene(spec, 9);
  const auto b = generate_synthetic_scene(spec, 9);
  const auto c = generate_synthetic_scene(spec, 10);
  EXPECT_EQ(a.observations.frames[2].pointmap.data, b.observations.frames[2].pointmap.data);
  EXPECT_EQ(a.observations.flows[3].flow.data, b.observations.flows[3].flow.data);
  EXPECT_NE(a.observations.frames[2].pointmap.data, c.observations.frames[2].pointmap.data);
}

TEST(Synthetic, RejectsBadSpec) {
  auto spec = small_spec();
  spec.frames = 1;
  EXPECT_THROW(generate_synthetic_scene(spec, 0), Error);
  spec = small_spec();
  spec.flow_noise = -1.0;
  EXPECT_THROW(generate_synthetic_scene(spec, 0), Error);
}
