#pragma once

// Central finite-difference check of render_backward. Shared by the unit
// tests and the acceptance suite.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "magsplat/rasterizer.hpp"

namespace magsplat::testing {

struct GradCheckStats {
  int compared = 0;
  int skipped_discontinuous = 0;
  int failed = 0;
  double worst_rel = 0.0;
  std::string worst_label;
};

inline double upstream_dot(const Image& img, const Image& up) {
  double s = 0.0;
  for (size_t i = 0; i < img.data.size(); ++i) s += img.data[i] * up.data[i];
  return s;
}

/// Compares every parameter of every primitive against (L(+h) - L(-h)) / 2h.
/// A sample is skipped when the two perturbed renders do not share the same
/// per-pixel contributor counts: the loss is piecewise smooth and a
/// difference across a cutoff (alpha < 1/255, footprint edge, T < 1e-4) is
/// not a derivative.
inline GradCheckStats check_render_gradients(const GaussianScene& scene, const RenderContext& ctx,
                                             const Image& upstream, double h, double rel_tol,
                                             double abs_floor = 1e-7) {
  const GradientBuffers g = render_backward(scene, ctx, upstream);
  GradCheckStats st;
  auto eval = [&](const GaussianScene& s, Raster<std::int32_t>& counts) {
    RenderOutput o = render(s, ctx);
    counts = std::move(o.contrib_count);
    return upstream_dot(o.image, upstream);
  };
  auto probe = [&](size_t i, const std::string& label, double analytic,
                   const std::function<void(GaussianPrimitive&, double)>& perturb) {
    GaussianScene sp = scene, sm = scene;
    perturb(sp.primitives[i], h);
    perturb(sm.primitives[i], -h);
    Raster<std::int32_t> cp, cm;
    const double lp = eval(sp, cp), lm = eval(sm, cm);
    if (cp.data != cm.data) {
      ++st.skipped_discontinuous;
      return;
    }
    const double fd = (lp - lm) / (2 * h);
    ++st.compared;
    const double err = std::abs(fd - analytic);
    const double scale = std::max(std::abs(fd), std::abs(analytic));
    const double rel = err / std::max(scale, abs_floor / rel_tol);
    if (rel > st.worst_rel) {
      st.worst_rel = rel;
      st.worst_label = label + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                       " fd=" + std::to_string(fd);
    }
    if (err > rel_tol * scale + abs_floor) ++st.failed;
  };
  for (size_t i = 0; i < scene.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      probe(i, "mu" + std::to_string(c), g.d_mu[i][c], [c](GaussianPrimitive& p, double d) { p.mu[c] += d; });
      probe(i, "s" + std::to_string(c), g.d_s[i][c], [c](GaussianPrimitive& p, double d) { p.s[c] += d; });
    }
    probe(i, "qw", g.d_q[i][0], [](GaussianPrimitive& p, double d) { p.q.w += d; });
    probe(i, "qx", g.d_q[i][1], [](GaussianPrimitive& p, double d) { p.q.x += d; });
    probe(i, "qy", g.d_q[i][2], [](GaussianPrimitive& p, double d) { p.q.y += d; });
    probe(i, "qz", g.d_q[i][3], [](GaussianPrimitive& p, double d) { p.q.z += d; });
    probe(i, "opacity", g.d_opacity[i], [](GaussianPrimitive& p, double d) { p.opacity += d; });
    for (int k = 0; k < g.sh_stride; ++k) {
      probe(i, "sh" + std::to_string(k), g.sh_of(i)[k],
            [k](GaussianPrimitive& p, double d) { p.sh[k] += d; });
    }
  }
  return st;
}

inline Image random_upstream(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Image up(w, h, 3);
  for (double& v : up.data) v = u(rng);
  return up;
}

}  // namespace magsplat::testing
