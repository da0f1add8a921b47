#pragma once

#include <cmath>
#include <random>

#include "magsplat/pose.hpp"
#include "test_support.hpp"

namespace magsplat::testing {

// Consistent multi-frame problem: targets are the exact projections.
inline BAProblem make_ba(int frames, int w, int h, std::mt19937_64& rng, double perturb) {
  BAProblem pb;
  pb.K = test_camera(w, h, 20.0);
  std::uniform_real_distribution<double> ud(2.0, 5.0);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int f = 0; f < frames; ++f) {
    const SE3 pose{Quaternion::exp(Vec3(0.0, 0.03 * f, 0.01 * f)), Vec3(-0.15 * f, 0.02 * f, 0.05 * f)};
    pb.poses.push_back(pose);
    Raster<double> inv(w, h, 1, 0.0);
    for (auto& v : inv.data) v = 1.0 / ud(rng);
    pb.inv_depths.push_back(inv);
  }
  for (int i = 0; i < frames; ++i) {
    for (int j = 0; j < frames; ++j) {
      if (i == j) continue;
      BAEdge e;
      e.i = i;
      e.j = j;
      e.target = Image(w, h, 2, 0.0);
      e.weight = Raster<double>(w, h, 2, 1.0);
      const SE3 rel = compose(pb.poses[j], pb.poses[i].inverse());
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const Vec2 u = project(pb.K, rel.apply(unproject(pb.K, Vec2(x, y), 1.0 / pb.inv_depths[i].at(x, y))));
          e.target.at(x, y, 0) = u.x();
          e.target.at(x, y, 1) = u.y();
          e.weight.at(x, y, 0) = 0.5 + 0.5 * std::abs(n(rng));
        }
      pb.edges.push_back(e);
    }
  }
  for (int f = 1; f < frames; ++f) {
    Vec6 d;
    for (int k = 0; k < 3; ++k) d[k] = perturb * 0.02 * n(rng);
    for (int k = 3; k < 6; ++k) d[k] = perturb * 0.01 * n(rng);
    pb.poses[f] = compose(SE3::exp(d), pb.poses[f]);
  }
  for (auto& inv : pb.inv_depths)
    for (auto& v : inv.data) v *= 1.0 + 0.05 * perturb * n(rng);
  return pb;
}

}  // namespace magsplat::testing
