#include <random>

#include <gtest/gtest.h>

#include "gradient_check.hpp"
#include "magsplat/rasterizer.hpp"
#include "test_support.hpp"

using namespace magsplat;
using magsplat::testing::random_scene;
using magsplat::testing::test_camera;

namespace {

RenderContext make_ctx(int w, int h, double f, Vec3 bg = Vec3(0.1, 0.2, 0.3)) {
  RenderContext ctx;
  ctx.K = test_camera(w, h, f);
  ctx.background = bg;
  return ctx;
}

GaussianPrimitive splat_at(const Vec3& mu, double s, double opacity, const Vec3& rgb, int degree = 0) {
  GaussianPrimitive g;
  g.mu = mu;
  g.s = Vec3::Constant(s);
  g.opacity = opacity;
  set_sh_from_rgb(g.sh, degree, rgb);
  return g;
}

}  // namespace

TEST(Render, EmptySceneIsBackground) {
  GaussianScene scene;
  scene.sh_degree = 0;
  const auto ctx = make_ctx(16, 12, 20.0);
  const auto out = render(scene, ctx);
  for (int y = 0; y < 12; ++y) {
    for (int x = 0; x < 16; ++x) {
      EXPECT_EQ(out.image.at(x, y, 0), 0.1);
      EXPECT_EQ(out.image.at(x, y, 2), 0.3);
      EXPECT_EQ(out.final_transmittance.at(x, y), 1.0);
    }
  }
  const auto oracle = render_oracle(scene, ctx);
  EXPECT_EQ(oracle.image.data, out.image.data);
}

TEST(Render, SingleOpaqueSplatAtCenter) {
  GaussianScene scene;
  scene.sh_degree = 0;
  const Vec3 c(0.8, 0.4, 0.2);
  scene.primitives.push_back(splat_at(Vec3(0, 0, 4), 0.2, 1.0, c));
  const auto ctx = make_ctx(33, 33, 40.0);
  const auto out = render(scene, ctx);
  for (int ch = 0; ch < 3; ++ch) {
    EXPECT_NEAR(out.image.at(16, 16, ch), 0.99 * c[ch] + 0.01 * ctx.background[ch], 1e-12);
  }
  const auto oracle = render_oracle(scene, ctx);
  EXPECT_EQ(oracle.image.data, out.image.data);
  EXPECT_EQ(oracle.final_transmittance.data, out.final_transmittance.data);
}

TEST(Render, TwoHalfAlphaSplats) {
  GaussianScene scene;
  scene.sh_degree = 0;
  const Vec3 c1(0.9, 0.1, 0.1), c2(0.1, 0.8, 0.3);
  // Listed back-first to exercise the depth sort.
  scene.primitives.push_back(splat_at(Vec3(0, 0, 6), 0.3, 0.5, c2));
  scene.primitives.push_back(splat_at(Vec3(0, 0, 3), 0.2, 0.5, c1));
  const auto ctx = make_ctx(33, 33, 40.0);
  const auto out = render(scene, ctx);
  for (int ch = 0; ch < 3; ++ch) {
    EXPECT_NEAR(out.image.at(16, 16, ch), 0.5 * c1[ch] + 0.25 * c2[ch] + 0.25 * ctx.background[ch], 1e-12);
  }
  EXPECT_NEAR(out.final_transmittance.at(16, 16), 0.25, 1e-12);
  EXPECT_EQ(out.contrib_count.at(16, 16), 2);
}

TEST(Render, MatchesOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 8; ++trial) {
    const GaussianScene scene = random_scene(rng, 120, 1 + trial % 3);
    const auto ctx = make_ctx(48, 40, 45.0);
    const auto fast = render(scene, ctx);
    const auto slow = render_oracle(scene, ctx);
    for (size_t i = 0; i < fast.image.data.size(); ++i) {
      ASSERT_NEAR(fast.image.data[i], slow.image.data[i], 1e-5);
    }
    EXPECT_EQ(fast.contrib_count.data, slow.contrib_count.data);
  }
}

TEST(Render, BlendWeightsAndTransmittanceSumToOne) {
  // With every color at 1 and a black background the image is sum_i T_i a_i.
  std::mt19937_64 rng(25);
  GaussianScene scene = random_scene(rng, 150, 1);
  for (auto& g : scene.primitives) {
    std::fill(g.sh.begin(), g.sh.end(), 0.0);
    set_sh_from_rgb(g.sh, 1, Vec3::Ones());
  }
  const auto ctx = make_ctx(48, 40, 45.0, Vec3::Zero());
  const auto out = render(scene, ctx);
  for (int y = 0; y < 40; ++y) {
    for (int x = 0; x < 48; ++x) {
      const double t = out.final_transmittance.at(x, y);
      ASSERT_GE(t, 0.0);
      ASSERT_NEAR(out.image.at(x, y, 0) + t, 1.0, 1e-6);
    }
  }
}

TEST(Render, DeterministicAcrossWorkerCounts) {
  std::mt19937_64 rng(22);
  const GaussianScene scene = random_scene(rng, 150, 2);
  auto ctx = make_ctx(64, 50, 60.0);
  const auto a = render(scene, ctx);
  const auto up = magsplat::testing::random_upstream(rng, 64, 50);
  const auto ga = render_backward(scene, ctx, up);
  ctx.workers = 3;
  const auto b = render(scene, ctx);
  const auto gb = render_backward(scene, ctx, up);
  EXPECT_EQ(a.image.data, b.image.data);
  EXPECT_EQ(ga.d_sh, gb.d_sh);
  for (size_t i = 0; i < ga.size(); ++i) {
    EXPECT_EQ(ga.d_mu[i], gb.d_mu[i]);
    EXPECT_EQ(ga.d_q[i], gb.d_q[i]);
  }
}

TEST(RenderBackward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(23);
  const GaussianScene scene = random_scene(rng, 20, 2);
  const auto ctx = make_ctx(32, 32, 30.0);
  const auto g = render_backward(scene, ctx, Image(32, 32, 3, 0.0));
  for (size_t i = 0; i < g.size(); ++i) {
    EXPECT_EQ(g.d_mu[i], Vec3::Zero());
    EXPECT_EQ(g.d_q[i], Vec4::Zero());
    EXPECT_EQ(g.d_s[i], Vec3::Zero());
    EXPECT_EQ(g.d_opacity[i], 0.0);
  }
  for (double v : g.d_sh) EXPECT_EQ(v, 0.0);
}

TEST(RenderBackward, OccludedSplatGetsNoGradient) {
  GaussianScene scene;
  scene.sh_degree = 0;
  // A stack of near-opaque wide splats drives T below the cutoff at the
  // center before the small splat behind them is reached.
  for (int k = 0; k < 3; ++k) scene.primitives.push_back(splat_at(Vec3(0, 0, 2 + 0.1 * k), 1.0, 1.0, Vec3(0.5, 0.5, 0.5)));
  scene.primitives.push_back(splat_at(Vec3(0, 0, 5), 0.05, 0.9, Vec3(0.9, 0.2, 0.2)));
  const auto ctx = make_ctx(17, 17, 20.0);
  Image up(17, 17, 3, 0.0);
  up.at(8, 8, 0) = 1.0;
  up.at(8, 8, 1) = -0.5;
  const auto fwd = render_forward(scene, ctx);
  ASSERT_EQ(fwd.output().contrib_count.at(8, 8), 3);  // T = 1e-6 after the walls stops traversal
  const auto g = render_backward(scene, ctx, fwd, up);
  EXPECT_EQ(g.d_mu[3], Vec3::Zero());
  EXPECT_EQ(g.d_opacity[3], 0.0);
}

TEST(RenderBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 3; ++trial) {
    const GaussianScene scene = random_scene(rng, 12, trial, 3.0, 5.0, 0.8);
    const auto ctx = make_ctx(32, 32, 30.0);
    const Image up = magsplat::testing::random_upstream(rng, 32, 32);
    const auto st = magsplat::testing::check_render_gradients(scene, ctx, up, 1e-4, 1e-3);
    EXPECT_EQ(st.failed, 0) << st.worst_label;
    EXPECT_GT(st.compared, 0);
    EXPECT_LE(st.skipped_discontinuous, st.compared / 10 + 1);
  }
}
