#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "magsplat/pose.hpp"
#include "magsplat/raster_io.hpp"

namespace magsplat {

namespace {

template <typename A, typename B>
bool same_size(const Raster<A>& a, const Raster<B>& b) {
  return a.width == b.width && a.height == b.height;
}

}  // namespace

void FrameObservations::validate() const {
  if (image.channels != 3 || pointmap.channels != 3) {
    throw Error(ErrorKind::ShapeMismatch, "image and pointmap need 3 channels");
  }
  if (!same_size(image, pointmap) || !same_size(image, confidence) || !same_size(image, depth) ||
      !same_size(image, motion_mask) || !same_size(image, initial_dyn_confidence)) {
    throw Error(ErrorKind::ShapeMismatch, "frame rasters differ in size");
  }
}

const FlowField* SequenceObservations::find_flow(int from, int to) const {
  for (const auto& f : flows) {
    if (f.from == from && f.to == to) return &f;
  }
  return nullptr;
}

void FilterConfig::validate() const {
  if (!(tau_c >= 0.0) || !(tau_d > 0.0)) throw Error(ErrorKind::ConfigError, "need tau_c >= 0 and tau_d > 0");
}

std::vector<Pixel> filter_points(const FrameObservations& obs, const FilterConfig& cfg) {
  std::vector<Pixel> out;
  for (int y = 0; y < obs.confidence.height; ++y) {
    for (int x = 0; x < obs.confidence.width; ++x) {
      if (obs.confidence.at(x, y) > cfg.tau_c && obs.depth.at(x, y) < cfg.tau_d) out.push_back({x, y});
    }
  }
  return out;
}

std::vector<Pixel> select_prompts(const Raster<double>& dyn_confidence, int K) {
  if (K < 1) throw Error(ErrorKind::InvalidArgument, "prompt count must be at least 1");
  const size_t n = dyn_confidence.pixel_count();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  const size_t k = std::min(n, static_cast<size_t>(K));
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](size_t a, size_t b) {
    const double va = dyn_confidence.data[a * dyn_confidence.channels];
    const double vb = dyn_confidence.data[b * dyn_confidence.channels];
    return va != vb ? va > vb : a < b;
  });
  std::vector<Pixel> out(k);
  for (size_t i = 0; i < k; ++i) {
    out[i] = {static_cast<int>(idx[i] % dyn_confidence.width), static_cast<int>(idx[i] / dyn_confidence.width)};
  }
  return out;
}

Mask fuse_masks(std::span<const Mask> segments, const Raster<double>& dyn_confidence, double tau_m) {
  const int W = dyn_confidence.width, H = dyn_confidence.height;
  Mask out(W, H, 1, 0);
  for (const auto& seg : segments) {
    if (seg.width != W || seg.height != H) throw Error(ErrorKind::ShapeMismatch, "segment size mismatch");
    double sum = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < seg.pixel_count(); ++i) {
      if (seg.data[i]) {
        sum += dyn_confidence.data[i];
        ++count;
      }
    }
    if (count == 0 || sum / static_cast<double>(count) <= tau_m) continue;
    for (size_t i = 0; i < seg.pixel_count(); ++i) {
      if (seg.data[i]) out.data[i] = 1;
    }
  }
  for (size_t i = 0; i < out.pixel_count(); ++i) {
    if (dyn_confidence.data[i] > tau_m) out.data[i] = 1;
  }
  return out;
}

std::vector<Pixel> static_set(std::span<const Pixel> S, const Mask& motion_mask) {
  std::vector<Pixel> out;
  out.reserve(S.size());
  for (const auto& p : S) {
    if (motion_mask.at(p.x, p.y) == 0) out.push_back(p);
  }
  return out;
}

std::vector<Mask> connected_components(const Mask& mask) {
  const int W = mask.width, H = mask.height;
  std::vector<int> label(mask.pixel_count(), -1);
  std::vector<Mask> out;
  std::vector<int> stack;
  for (int start = 0; start < W * H; ++start) {
    if (!mask.data[start] || label[start] >= 0) continue;
    Mask comp(W, H, 1, 0);
    const int id = static_cast<int>(out.size());
    stack.assign(1, start);
    label[start] = id;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      comp.data[p] = 1;
      const int x = p % W, y = p / W;
      const int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (const auto& q : nb) {
        if (q[0] < 0 || q[1] < 0 || q[0] >= W || q[1] >= H) continue;
        const int qi = q[1] * W + q[0];
        if (mask.data[qi] && label[qi] < 0) {
          label[qi] = id;
          stack.push_back(qi);
        }
      }
    }
    out.push_back(std::move(comp));
  }
  return out;
}

std::vector<Mask> OracleSegmenter::segment(int frame, const Image& image, std::span<const Pixel> prompts) {
  if (frame < 0 || frame >= static_cast<int>(reference_.size())) {
    throw Error(ErrorKind::InvalidArgument, "oracle segmenter has no reference for frame " + std::to_string(frame));
  }
  const Mask& ref = reference_[frame];
  if (ref.width != image.width || ref.height != image.height) {
    throw Error(ErrorKind::ShapeMismatch, "reference mask does not match the image");
  }
  std::vector<Mask> out;
  for (auto& comp : connected_components(ref)) {
    const bool hit = std::any_of(prompts.begin(), prompts.end(), [&](const Pixel& p) { return comp.at(p.x, p.y); });
    if (hit) out.push_back(std::move(comp));
  }
  return out;
}

std::vector<Mask> RasterSegmenter::segment(int frame, const Image& image, std::span<const Pixel>) {
  std::vector<Mask> out;
  for (int k = 0;; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "%04d_%02d.ras", frame, k);
    const std::filesystem::path p = std::filesystem::path(dir_) / name;
    if (!std::filesystem::exists(p)) break;
    Mask m = read_mask(p.string());
    if (m.width != image.width || m.height != image.height) {
      throw Error(ErrorKind::ShapeMismatch, "segment raster " + p.string() + " does not match the image");
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<SE3> invert_poses(std::span<const SE3> poses) {
  std::vector<SE3> out(poses.size());
  for (size_t i = 0; i < poses.size(); ++i) out[i] = poses[i].inverse();
  return out;
}

}  // namespace magsplat
