#include "magsplat/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace magsplat {

void LossWeights::validate() const {
  if (!(lambda_arap >= 0.0) || !(lambda_rigid >= 0.0) || !(lambda_dssim >= 0.0) || lambda_dssim > 1.0) {
    throw Error(ErrorKind::ConfigError, "loss weights must be nonnegative and lambda_dssim at most 1");
  }
}

namespace {

void require_same_shape(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error(ErrorKind::ShapeMismatch, "images differ in shape");
}

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_window(int size) {
  std::vector<double> g(size);
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    g[i] = std::exp(-(i - c) * (i - c) / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

int window_for(int w, int h) {
  int win = std::min({kSsimWindow, w, h});
  if (win % 2 == 0) --win;
  return std::max(win, 1);
}

// Separable 'valid' correlation of a W x H plane with the window.
std::vector<double> filter_valid(const std::vector<double>& src, int W, int H, const std::vector<double>& g) {
  const int win = static_cast<int>(g.size());
  const int Wo = W - win + 1, Ho = H - win + 1;
  std::vector<double> tmp(static_cast<size_t>(Wo) * H);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < Wo; ++x) {
      double s = 0.0;
      for (int k = 0; k < win; ++k) s += g[k] * src[static_cast<size_t>(y) * W + x + k];
      tmp[static_cast<size_t>(y) * Wo + x] = s;
    }
  }
  std::vector<double> out(static_cast<size_t>(Wo) * Ho);
  for (int y = 0; y < Ho; ++y) {
    for (int x = 0; x < Wo; ++x) {
      double s = 0.0;
      for (int k = 0; k < win; ++k) s += g[k] * tmp[static_cast<size_t>(y + k) * Wo + x];
      out[static_cast<size_t>(y) * Wo + x] = s;
    }
  }
  return out;
}

// Adjoint of filter_valid.
std::vector<double> filter_valid_adjoint(const std::vector<double>& dst, int W, int H, const std::vector<double>& g) {
  const int win = static_cast<int>(g.size());
  const int Wo = W - win + 1, Ho = H - win + 1;
  std::vector<double> tmp(static_cast<size_t>(Wo) * H, 0.0);
  for (int y = 0; y < Ho; ++y) {
    for (int x = 0; x < Wo; ++x) {
      const double v = dst[static_cast<size_t>(y) * Wo + x];
      for (int k = 0; k < win; ++k) tmp[static_cast<size_t>(y + k) * Wo + x] += g[k] * v;
    }
  }
  std::vector<double> out(static_cast<size_t>(W) * H, 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < Wo; ++x) {
      const double v = tmp[static_cast<size_t>(y) * Wo + x];
      for (int k = 0; k < win; ++k) out[static_cast<size_t>(y) * W + x + k] += g[k] * v;
    }
  }
  return out;
}

std::vector<double> plane(const Image& img, int ch) {
  std::vector<double> p(img.pixel_count());
  for (size_t i = 0; i < p.size(); ++i) p[i] = img.data[i * img.channels + ch];
  return p;
}

struct SsimParts {
  double ssim = 0.0;
  double cs = 0.0;  // contrast-structure term alone
};

SsimParts ssim_parts(const Image& a, const Image& b, Image* grad_a) {
  require_same_shape(a, b);
  const int W = a.width, H = a.height, C = a.channels;
  if (W == 0 || H == 0 || C == 0) throw Error(ErrorKind::ShapeMismatch, "ssim of an empty image");
  const auto g = gaussian_window(window_for(W, H));
  const int win = static_cast<int>(g.size());
  const int Wo = W - win + 1, Ho = H - win + 1;
  const double count = static_cast<double>(Wo) * Ho * C;
  if (grad_a) *grad_a = Image(W, H, C, 0.0);

  double sum_s = 0.0, sum_cs = 0.0;
  for (int ch = 0; ch < C; ++ch) {
    const auto pa = plane(a, ch), pb = plane(b, ch);
    std::vector<double> aa(pa.size()), bb(pa.size()), ab(pa.size());
    for (size_t i = 0; i < pa.size(); ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto ma = filter_valid(pa, W, H, g), mb = filter_valid(pb, W, H, g);
    const auto saa = filter_valid(aa, W, H, g), sbb = filter_valid(bb, W, H, g), sab = filter_valid(ab, W, H, g);
    std::vector<double> d_ma, d_saa, d_sab;
    if (grad_a) {
      d_ma.assign(ma.size(), 0.0);
      d_saa.assign(ma.size(), 0.0);
      d_sab.assign(ma.size(), 0.0);
    }
    for (size_t i = 0; i < ma.size(); ++i) {
      const double va = saa[i] - ma[i] * ma[i];
      const double vb = sbb[i] - mb[i] * mb[i];
      const double cov = sab[i] - ma[i] * mb[i];
      const double n1 = 2 * ma[i] * mb[i] + kC1, n2 = 2 * cov + kC2;
      const double d1 = ma[i] * ma[i] + mb[i] * mb[i] + kC1, d2 = va + vb + kC2;
      const double f = (n1 * n2) / (d1 * d2);
      sum_s += f;
      sum_cs += n2 / d2;
      if (grad_a) {
        d_ma[i] = f * (2 * mb[i] / n1 - 2 * mb[i] / n2 - 2 * ma[i] / d1 + 2 * ma[i] / d2) / count;
        d_saa[i] = -f / d2 / count;
        d_sab[i] = 2 * f / n2 / count;
      }
    }
    if (grad_a) {
      const auto ga = filter_valid_adjoint(d_ma, W, H, g);
      const auto gaa = filter_valid_adjoint(d_saa, W, H, g);
      const auto gab = filter_valid_adjoint(d_sab, W, H, g);
      for (size_t i = 0; i < pa.size(); ++i) {
        grad_a->data[i * C + ch] = ga[i] + 2 * pa[i] * gaa[i] + pb[i] * gab[i];
      }
    }
  }
  return {sum_s / count, sum_cs / count};
}

Image downsample2(const Image& img) {
  const int W = img.width / 2, H = img.height / 2, C = img.channels;
  Image out(W, H, C);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < C; ++c) {
        out.at(x, y, c) = 0.25 * (img.at(2 * x, 2 * y, c) + img.at(2 * x + 1, 2 * y, c) +
                                  img.at(2 * x, 2 * y + 1, c) + img.at(2 * x + 1, 2 * y + 1, c));
      }
    }
  }
  return out;
}

Image crop(const Image& img, int x0, int y0, int w, int h) {
  Image out(w, h, img.channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(x0 + x, y0 + y, c);
    }
  }
  return out;
}

// Grows [lo, hi] to at least `want` samples inside [0, n).
void grow_range(int& lo, int& hi, int want, int n) {
  want = std::min(want, n);
  while (hi - lo + 1 < want) {
    if (lo > 0) --lo;
    if (hi - lo + 1 < want && hi < n - 1) ++hi;
  }
}

ControlLoss masked_render_loss(const Image& img, const Image& gt, const Mask* mask, const LossWeights& w,
                               Image* grad) {
  require_same_shape(img, gt);
  if (img.channels != 3) throw Error(ErrorKind::ShapeMismatch, "render losses expect 3-channel images");
  const int W = img.width, H = img.height;
  if (mask && (mask->width != W || mask->height != H || mask->channels != 1)) {
    throw Error(ErrorKind::ShapeMismatch, "mask does not match the image");
  }
  if (grad) *grad = Image(W, H, 3, 0.0);

  int x0 = W, y0 = H, x1 = -1, y1 = -1;
  size_t n = 0;
  double l1 = 0.0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (mask && mask->at(x, y) == 0) continue;
      ++n;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      for (int c = 0; c < 3; ++c) l1 += std::abs(img.at(x, y, c) - gt.at(x, y, c));
    }
  }
  ControlLoss out;
  if (n == 0) {
    out.empty_mask = true;
    return out;
  }
  const double denom = 3.0 * static_cast<double>(n);
  l1 /= denom;
  if (grad) {
    const double s = (1.0 - w.lambda_dssim) / denom;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        if (mask && mask->at(x, y) == 0) continue;
        for (int c = 0; c < 3; ++c) {
          const double d = img.at(x, y, c) - gt.at(x, y, c);
          grad->at(x, y, c) = d > 0.0 ? s : (d < 0.0 ? -s : 0.0);
        }
      }
    }
  }
  double ds = 0.0;
  if (w.lambda_dssim > 0.0) {
    grow_range(x0, x1, kSsimWindow, W);
    grow_range(y0, y1, kSsimWindow, H);
    const int cw = x1 - x0 + 1, chh = y1 - y0 + 1;
    const bool full = cw == W && chh == H;
    Image gs;
    const double s = full ? ssim_parts(img, gt, grad ? &gs : nullptr).ssim
                          : ssim_parts(crop(img, x0, y0, cw, chh), crop(gt, x0, y0, cw, chh),
                                       grad ? &gs : nullptr).ssim;
    ds = (1.0 - s) / 2.0;
    if (grad) {
      const double k = -0.5 * w.lambda_dssim;
      for (int y = 0; y < chh; ++y) {
        for (int x = 0; x < cw; ++x) {
          for (int c = 0; c < 3; ++c) grad->at(x0 + x, y0 + y, c) += k * gs.at(x, y, c);
        }
      }
    }
  }
  out.value = (1.0 - w.lambda_dssim) * l1 + w.lambda_dssim * ds;
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b);
  if (a.data.empty()) throw Error(ErrorKind::ShapeMismatch, "psnr of an empty image");
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double ssim(const Image& a, const Image& b) { return ssim_parts(a, b, nullptr).ssim; }

double ssim(const Image& a, const Image& b, Image* grad_a) { return ssim_parts(a, b, grad_a).ssim; }

int ms_ssim_scales(int min_dim) {
  if (min_dim < 20) return 1;
  return std::min(5, 1 + static_cast<int>(std::floor(std::log2(min_dim / 10.0))));
}

double ms_ssim(const Image& a, const Image& b) {
  require_same_shape(a, b);
  static constexpr double kWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  const int scales = ms_ssim_scales(std::min(a.width, a.height));
  double wsum = 0.0;
  for (int s = 0; s < scales; ++s) wsum += kWeights[s];
  Image ca = a, cb = b;
  double result = 1.0;
  for (int s = 0; s < scales; ++s) {
    const SsimParts p = ssim_parts(ca, cb, nullptr);
    const double term = s + 1 == scales ? p.ssim : p.cs;
    result *= std::pow(std::max(term, 0.0), kWeights[s] / wsum);
    if (s + 1 < scales) {
      ca = downsample2(ca);
      cb = downsample2(cb);
    }
  }
  return result;
}

double l_render(const Image& img, const Image& gt, const LossWeights& w, Image* grad) {
  return masked_render_loss(img, gt, nullptr, w, grad).value;
}

ControlLoss l_control(const Image& img, const Image& gt, const Mask& mask, const LossWeights& w, Image* grad) {
  return masked_render_loss(img, gt, &mask, w, grad);
}

ArapNeighbors compute_arap_neighbors(const ControlPointSet& controls, int K) {
  const size_t n = controls.size();
  ArapNeighbors out(n);
  if (n < 2) return out;
  const size_t k = std::min<size_t>(static_cast<size_t>(K), n - 1);
  std::vector<std::pair<double, std::int32_t>> d;
  for (size_t i = 0; i < n; ++i) {
    d.clear();
    for (size_t j = 0; j < n; ++j) {
      if (j != i) d.emplace_back((controls.points[i].p - controls.points[j].p).squaredNorm(), j);
    }
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    std::vector<double> e(k);
    double emin = std::numeric_limits<double>::infinity();
    for (size_t m = 0; m < k; ++m) {
      const double r = controls.points[d[m].second].radius;
      e[m] = d[m].first / (2.0 * r * r);
      emin = std::min(emin, e[m]);
    }
    double sum = 0.0;
    for (size_t m = 0; m < k; ++m) sum += std::exp(-(e[m] - emin));
    out[i].resize(k);
    for (size_t m = 0; m < k; ++m) {
      out[i][m] = {d[m].second, std::exp(-(e[m] - emin)) / sum, std::exp(-e[m])};
    }
  }
  return out;
}

double l_arap(const ControlPointSet& controls, const ControlTransforms& at_t1, const ControlTransforms& at_t2,
              const ArapNeighbors& neighbors, ArapGradients* grads) {
  const size_t n = controls.size();
  if (at_t1.size() != n || at_t2.size() != n || neighbors.size() != n) {
    throw Error(ErrorKind::LengthMismatch, "arap: transforms or neighbors do not match the control set");
  }
  std::vector<Mat3> dA, dB;
  if (grads) {
    for (auto* tg : {&grads->t1, &grads->t2}) {
      tg->d_rotation.assign(n, Vec4::Zero());
      tg->d_translation.assign(n, Vec3::Zero());
    }
    dA.assign(n, Mat3::Zero());
    dB.assign(n, Mat3::Zero());
  }
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Mat3 A = at_t1[i].rotation_matrix(), B = at_t2[i].rotation_matrix();
    const Mat3 Ri = A * B.transpose();
    const Vec3 pi1 = controls.points[i].p + at_t1[i].translation;
    const Vec3 pi2 = controls.points[i].p + at_t2[i].translation;
    Mat3 dRi = Mat3::Zero();
    for (const auto& nb : neighbors[i]) {
      const size_t k = static_cast<size_t>(nb.index);
      const Vec3 e1 = pi1 - (controls.points[k].p + at_t1[k].translation);
      const Vec3 e2 = pi2 - (controls.points[k].p + at_t2[k].translation);
      const Vec3 r = e1 - Ri * e2;
      total += nb.weight * r.squaredNorm();
      if (grads) {
        const Vec3 dr = 2.0 * nb.weight * r;
        grads->t1.d_translation[i] += dr;
        grads->t1.d_translation[k] -= dr;
        const Vec3 de2 = -Ri.transpose() * dr;
        grads->t2.d_translation[i] += de2;
        grads->t2.d_translation[k] -= de2;
        dRi -= dr * e2.transpose();
      }
    }
    if (grads) {
      dA[i] += dRi * B;
      dB[i] += dRi.transpose() * A;
    }
  }
  if (grads) {
    for (size_t i = 0; i < n; ++i) {
      grads->t1.d_rotation[i] = rotation_matrix_vjp(dA[i], at_t1[i].rotation.coeffs());
      grads->t2.d_rotation[i] = rotation_matrix_vjp(dB[i], at_t2[i].rotation.coeffs());
    }
  }
  return total;
}

double l_arap(const ControlPointSet& controls, const DeformationField& field, double t1, double t2,
              const ArapNeighbors& neighbors) {
  return l_arap(controls, control_transforms(field, controls, t1), control_transforms(field, controls, t2),
                neighbors);
}

double l_rigid(const GaussianScene& scene, const std::vector<Vec3>& warped, std::vector<Vec3>* grad_mu) {
  if (warped.size() != scene.size()) throw Error(ErrorKind::LengthMismatch, "warped positions do not match scene");
  if (grad_mu) grad_mu->assign(scene.size(), Vec3::Zero());
  double total = 0.0;
  for (size_t j = 0; j < scene.size(); ++j) {
    if (scene.primitives[j].dynamic_label) continue;
    const Vec3 d = warped[j] - scene.primitives[j].mu;
    total += d.squaredNorm();
    if (grad_mu) (*grad_mu)[j] = 2.0 * d;
  }
  return total;
}

LossBreakdown total_loss(double render, double control, double arap, double rigid, const LossWeights& w) {
  LossBreakdown b;
  b.render = render;
  b.control = control;
  b.arap = arap;
  b.rigid = rigid;
  b.total = render + w.lambda_arap * arap + w.lambda_rigid * rigid;
  return b;
}

FrameMetrics frame_metrics(int frame, const Image& rendered, const Image& gt) {
  return {frame, psnr(rendered, gt), ssim(rendered, gt), ms_ssim(rendered, gt)};
}

std::string metrics_csv(const std::vector<FrameMetrics>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "frame,psnr,ssim,ms_ssim\n";
  for (const auto& r : rows) os << r.frame << ',' << r.psnr << ',' << r.ssim << ',' << r.ms_ssim << '\n';
  return os.str();
}

}  // namespace magsplat
