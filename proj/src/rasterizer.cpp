#include "magsplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "magsplat/parallel.hpp"

namespace magsplat {

void GradientBuffers::reset(size_t count, int sh_degree) {
  sh_stride = 3 * sh_coeff_count(sh_degree);
  d_mu.assign(count, Vec3::Zero());
  d_q.assign(count, Vec4::Zero());
  d_s.assign(count, Vec3::Zero());
  d_opacity.assign(count, 0.0);
  d_sh.assign(count * sh_stride, 0.0);
}

bool GradientBuffers::all_finite() const {
  for (size_t i = 0; i < d_mu.size(); ++i) {
    if (!d_mu[i].allFinite() || !d_q[i].allFinite() || !d_s[i].allFinite() || !std::isfinite(d_opacity[i])) {
      return false;
    }
  }
  return std::all_of(d_sh.begin(), d_sh.end(), [](double v) { return std::isfinite(v); });
}

namespace {

constexpr int kTileSize = 16;

using Splat = ForwardState::Splat;

std::vector<Splat> prepare_splats(const GaussianScene& scene, const RenderContext& ctx) {
  ctx.K.validate();
  std::vector<Splat> splats;
  splats.reserve(scene.primitives.size());
  const Vec3 center = ctx.pose.inverse().translation;
  for (size_t i = 0; i < scene.primitives.size(); ++i) {
    const GaussianPrimitive& g = scene.primitives[i];
    auto sg = project_gaussian(g, scene.sh_degree, ctx.pose, ctx.K);
    if (!sg) continue;
    Splat s;
    s.primitive = static_cast<int>(i);
    s.sg = *sg;
    s.p_cam = ctx.pose.apply(g.mu);
    const Vec3 d = g.mu - center;
    s.view_dist = d.norm();
    s.view_dir = d / s.view_dist;
    s.raw_color = eval_sh_raw(g.sh, scene.sh_degree, s.view_dir) + Vec3::Constant(kShDcOffset);
    splats.push_back(std::move(s));
  }
  std::stable_sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) {
    if (a.sg.depth != b.sg.depth) return a.sg.depth < b.sg.depth;
    return a.primitive < b.primitive;
  });
  return splats;
}

// Shared per-pixel compositing loop used by both the binned renderer and the
// oracle. `visit(splat, alpha, T)` is called for every contributor.
template <typename Range, typename Visit>
void composite_pixel(const std::vector<Splat>& splats, const Range& candidates, int px, int py,
                     const Vec3& background, double* rgb, double& T_out, int& count, Visit&& visit) {
  double T = 1.0;
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;
  count = 0;
  const Vec2 pixel(px, py);
  for (auto idx : candidates) {
    if (T < kTransmittanceMin) break;
    const SplattedGaussian& sg = splats[idx].sg;
    if (!in_footprint(sg, px, py)) continue;
    const double alpha = eval_alpha(sg, pixel);
    if (alpha < kAlphaMin) continue;
    const double w = T * alpha;
    c0 += w * sg.view_color[0];
    c1 += w * sg.view_color[1];
    c2 += w * sg.view_color[2];
    visit(static_cast<std::int32_t>(idx), alpha, T);
    T *= (1.0 - alpha);
    ++count;
  }
  rgb[0] = c0 + T * background[0];
  rgb[1] = c1 + T * background[1];
  rgb[2] = c2 + T * background[2];
  T_out = T;
}

RenderOutput make_output(int w, int h) {
  RenderOutput out;
  out.image = Image(w, h, 3, 0.0);
  out.final_transmittance = Raster<double>(w, h, 1, 1.0);
  out.contrib_count = Raster<std::int32_t>(w, h, 1, 0);
  return out;
}

struct TileBins {
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::vector<std::int32_t>> bins;
};

TileBins bin_splats(const std::vector<Splat>& splats, int width, int height) {
  TileBins tb;
  tb.tiles_x = (width + kTileSize - 1) / kTileSize;
  tb.tiles_y = (height + kTileSize - 1) / kTileSize;
  tb.bins.resize(static_cast<size_t>(tb.tiles_x) * tb.tiles_y);
  for (size_t i = 0; i < splats.size(); ++i) {
    const SplattedGaussian& sg = splats[i].sg;
    // One pixel of slack; in_footprint() makes the exact decision.
    const int x0 = std::max(0, static_cast<int>(std::floor(sg.mu2d.x() - sg.radius)) - 1);
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(sg.mu2d.x() + sg.radius)) + 1);
    const int y0 = std::max(0, static_cast<int>(std::floor(sg.mu2d.y() - sg.radius)) - 1);
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(sg.mu2d.y() + sg.radius)) + 1);
    if (x0 > x1 || y0 > y1) continue;
    for (int ty = y0 / kTileSize; ty <= y1 / kTileSize; ++ty) {
      for (int tx = x0 / kTileSize; tx <= x1 / kTileSize; ++tx) {
        tb.bins[static_cast<size_t>(ty) * tb.tiles_x + tx].push_back(static_cast<std::int32_t>(i));
      }
    }
  }
  return tb;
}

}  // namespace

ForwardState render_forward(const GaussianScene& scene, const RenderContext& ctx) {
  const int W = ctx.width(), H = ctx.height();
  ForwardState fs;
  fs.splats_ = prepare_splats(scene, ctx);
  fs.out_ = make_output(W, H);
  const TileBins tb = bin_splats(fs.splats_, W, H);

  // One chunk per tile row; contributions are concatenated in chunk order.
  std::vector<std::vector<ForwardState::Contribution>> chunk_contribs(tb.tiles_y);
  std::vector<std::vector<std::uint32_t>> chunk_counts(tb.tiles_y);
  parallel_for_chunks(tb.tiles_y, ctx.workers, [&](int ty) {
    const int y0 = ty * kTileSize, y1 = std::min(H, y0 + kTileSize);
    auto& contribs = chunk_contribs[ty];
    auto& counts = chunk_counts[ty];
    counts.reserve(static_cast<size_t>(y1 - y0) * W);
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < W; ++x) {
        const auto& bin = tb.bins[static_cast<size_t>(ty) * tb.tiles_x + x / kTileSize];
        double T = 1.0;
        int count = 0;
        composite_pixel(fs.splats_, bin, x, y, ctx.background, &fs.out_.image.at(x, y, 0), T, count,
                        [&](std::int32_t s, double a, double t) { contribs.push_back({s, a, t}); });
        fs.out_.final_transmittance.at(x, y) = T;
        fs.out_.contrib_count.at(x, y) = count;
        counts.push_back(static_cast<std::uint32_t>(count));
      }
    }
  });

  fs.offsets_.assign(static_cast<size_t>(W) * H + 1, 0);
  size_t pix = 0;
  std::uint32_t running = 0;
  for (int ty = 0; ty < tb.tiles_y; ++ty) {
    for (std::uint32_t c : chunk_counts[ty]) {
      fs.offsets_[pix++] = running;
      running += c;
    }
    fs.contributions_.insert(fs.contributions_.end(), chunk_contribs[ty].begin(), chunk_contribs[ty].end());
  }
  fs.offsets_[pix] = running;
  return fs;
}

RenderOutput render(const GaussianScene& scene, const RenderContext& ctx) {
  return render_forward(scene, ctx).output();
}

RenderOutput render_oracle(const GaussianScene& scene, const RenderContext& ctx) {
  const int W = ctx.width(), H = ctx.height();
  const std::vector<Splat> splats = prepare_splats(scene, ctx);
  RenderOutput out = make_output(W, H);
  std::vector<std::int32_t> all(splats.size());
  std::iota(all.begin(), all.end(), 0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double T = 1.0;
      int count = 0;
      composite_pixel(splats, all, x, y, ctx.background, &out.image.at(x, y, 0), T, count,
                      [](std::int32_t, double, double) {});
      out.final_transmittance.at(x, y) = T;
      out.contrib_count.at(x, y) = count;
    }
  }
  return out;
}

GradientBuffers render_backward(const GaussianScene& scene, const RenderContext& ctx,
                                const Image& upstream) {
  return render_backward(scene, ctx, render_forward(scene, ctx), upstream);
}

namespace {

// Accumulated screen-space gradients for one splat.
struct ScreenGrad {
  double mu2d[2] = {0, 0};
  double conic_outer[3] = {0, 0, 0};  // dL/dSigma' entries (00, 01, 11), symmetric
  double opacity = 0.0;
  double color[3] = {0, 0, 0};
};

}  // namespace

GradientBuffers render_backward(const GaussianScene& scene, const RenderContext& ctx,
                                const ForwardState& fs, const Image& upstream) {
  const int W = ctx.width(), H = ctx.height();
  if (upstream.width != W || upstream.height != H || upstream.channels != 3) {
    throw Error(ErrorKind::ShapeMismatch, "upstream gradient image does not match the render size");
  }
  GradientBuffers grads;
  grads.reset(scene.primitives.size(), scene.sh_degree);

  const auto& splats = fs.splats_;
  const int nchunks = (H + kTileSize - 1) / kTileSize;
  std::vector<std::vector<ScreenGrad>> chunk_grads(nchunks);
  parallel_for_chunks(nchunks, ctx.workers, [&](int chunk) {
    auto& sgrads = chunk_grads[chunk];
    sgrads.assign(splats.size(), ScreenGrad{});
    const int y0 = chunk * kTileSize, y1 = std::min(H, y0 + kTileSize);
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < W; ++x) {
        const double g[3] = {upstream.at(x, y, 0), upstream.at(x, y, 1), upstream.at(x, y, 2)};
        if (g[0] == 0.0 && g[1] == 0.0 && g[2] == 0.0) continue;
        const size_t pix = static_cast<size_t>(y) * W + x;
        const std::uint32_t begin = fs.offsets_[pix], end = fs.offsets_[pix + 1];
        const double Tf = fs.out_.final_transmittance.at(x, y);
        double acc[3] = {Tf * ctx.background[0], Tf * ctx.background[1], Tf * ctx.background[2]};
        for (std::uint32_t k = end; k-- > begin;) {
          const auto& rec = fs.contributions_[k];
          const Splat& s = splats[rec.splat];
          const Vec3& c = s.sg.view_color;
          const double a = rec.alpha, T = rec.transmittance;
          ScreenGrad& sgr = sgrads[rec.splat];
          const double w = T * a;
          double dl_da = 0.0;
          for (int ch = 0; ch < 3; ++ch) {
            sgr.color[ch] += w * g[ch];
            dl_da += g[ch] * (T * c[ch] - acc[ch] / (1.0 - a));
            acc[ch] += w * c[ch];
          }
          // Clamped alphas carry no parameter gradient.
          if (a >= kAlphaMax) continue;
          const Vec2 d(x - s.sg.mu2d.x(), y - s.sg.mu2d.y());
          const Mat2& S = s.sg.sigma2d;
          const double det = S.determinant();
          Mat2 inv;
          inv << S(1, 1) / det, -S(0, 1) / det, -S(1, 0) / det, S(0, 0) / det;
          const Vec2 id = inv * d;
          sgr.opacity += dl_da * (a / s.sg.opacity);
          const double dl_dm = dl_da * (-0.5 * a);
          // dm/dmu2d = -2 inv d ; dm/dSigma' = -inv d d^T inv
          sgr.mu2d[0] += dl_dm * (-2.0 * id.x());
          sgr.mu2d[1] += dl_dm * (-2.0 * id.y());
          sgr.conic_outer[0] += -dl_dm * id.x() * id.x();
          sgr.conic_outer[1] += -dl_dm * id.x() * id.y();
          sgr.conic_outer[2] += -dl_dm * id.y() * id.y();
        }
      }
    }
  });

  std::vector<ScreenGrad> total(splats.size());
  for (const auto& cg : chunk_grads) {
    for (size_t i = 0; i < splats.size(); ++i) {
      ScreenGrad& t = total[i];
      const ScreenGrad& c = cg[i];
      t.mu2d[0] += c.mu2d[0];
      t.mu2d[1] += c.mu2d[1];
      for (int k = 0; k < 3; ++k) {
        t.conic_outer[k] += c.conic_outer[k];
        t.color[k] += c.color[k];
      }
      t.opacity += c.opacity;
    }
  }

  const Mat3 Wr = ctx.pose.rotation_matrix();
  const int ncoef = sh_coeff_count(scene.sh_degree);
  for (size_t si = 0; si < splats.size(); ++si) {
    const Splat& s = splats[si];
    const ScreenGrad& sg = total[si];
    const GaussianPrimitive& prim = scene.primitives[s.primitive];
    const size_t pi = static_cast<size_t>(s.primitive);

    grads.d_opacity[pi] = sg.opacity;

    // Color -> SH coefficients and view direction.
    Vec3 dl_draw = Vec3::Zero();
    for (int ch = 0; ch < 3; ++ch) {
      const double rc = s.raw_color[ch];
      if (rc > 0.0 && rc < 1.0) dl_draw[ch] = sg.color[ch];
    }
    ShBasis basis;
    std::array<Vec3, 16> dbasis;
    sh_basis_with_gradient(scene.sh_degree, s.view_dir, basis, dbasis);
    double* dsh = grads.sh_of(pi);
    Vec3 dl_dv = Vec3::Zero();
    for (int k = 0; k < ncoef; ++k) {
      double coef_dot = 0.0;
      for (int ch = 0; ch < 3; ++ch) {
        dsh[k * 3 + ch] = basis[k] * dl_draw[ch];
        coef_dot += prim.sh[k * 3 + ch] * dl_draw[ch];
      }
      dl_dv += coef_dot * dbasis[k];
    }
    const Vec3& v = s.view_dir;
    Vec3 dl_dmu = (dl_dv - v * v.dot(dl_dv)) / s.view_dist;

    // Screen-space mean and covariance -> camera-space point and 3D covariance.
    const Vec3& pc = s.p_cam;
    const Mat23 J = projection_jacobian(ctx.K, pc);
    const Mat3 cov = assemble_covariance(prim.q, prim.s);
    const Mat3 M = Wr * cov * Wr.transpose();
    Mat2 G;
    G << sg.conic_outer[0], sg.conic_outer[1], sg.conic_outer[1], sg.conic_outer[2];
    const Mat23 dJ = 2.0 * G * J * M;
    const double fx = ctx.K.fx, fy = ctx.K.fy;
    const double iz = 1.0 / pc.z(), iz2 = iz * iz, iz3 = iz2 * iz;
    Vec3 dl_dpc = J.transpose() * Vec2(sg.mu2d[0], sg.mu2d[1]);
    dl_dpc.x() += dJ(0, 2) * (-fx * iz2);
    dl_dpc.y() += dJ(1, 2) * (-fy * iz2);
    dl_dpc.z() += dJ(0, 0) * (-fx * iz2) + dJ(0, 2) * (2.0 * fx * pc.x() * iz3) +
                  dJ(1, 1) * (-fy * iz2) + dJ(1, 2) * (2.0 * fy * pc.y() * iz3);
    dl_dmu += Wr.transpose() * dl_dpc;
    grads.d_mu[pi] = dl_dmu;

    const Mat3 dl_dcov = Wr.transpose() * (J.transpose() * G * J) * Wr;
    const double qn = prim.q.norm();
    const Vec4 qh = prim.q.coeffs() / qn;
    const Mat3 R = Quaternion::from_coeffs(qh).to_matrix();
    const Mat3 Mrs = R * prim.s.asDiagonal();
    const Mat3 dl_dMrs = 2.0 * dl_dcov * Mrs;
    Vec3 dl_ds;
    Mat3 dl_dR;
    for (int i = 0; i < 3; ++i) {
      dl_ds[i] = dl_dMrs.col(i).dot(R.col(i));
      dl_dR.col(i) = dl_dMrs.col(i) * prim.s[i];
    }
    grads.d_s[pi] = dl_ds;
    const Vec4 dl_dqh = rotation_matrix_vjp(dl_dR, qh);
    grads.d_q[pi] = (dl_dqh - qh * qh.dot(dl_dqh)) / qn;
  }
  return grads;
}

}  // namespace magsplat
