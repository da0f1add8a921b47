#include <cmath>

#include "magsplat/pose.hpp"

namespace magsplat {

namespace {

constexpr double kMaxDamping = 1e12;

Mask frame_mask(const SequenceObservations& seq, int t, const MaBaConfig& cfg, Segmenter* segmenter) {
  const FrameObservations& obs = seq.frames[t];
  if (!cfg.use_masks) return Mask(obs.width(), obs.height(), 1, 0);
  // Without a segmenter the ingested mask stands in for the fused one.
  if (!segmenter) return obs.motion_mask;
  const auto prompts = select_prompts(obs, cfg.prompts);
  const auto segments = segmenter->segment(t, obs.image, prompts);
  return fuse_masks(segments, obs.initial_dyn_confidence, cfg.tau_m);
}

std::vector<Correspondence> flow_correspondences(const FrameObservations& src, const FlowField* flow,
                                                 std::span<const Pixel> pixels) {
  std::vector<Correspondence> out;
  out.reserve(pixels.size());
  for (const auto& p : pixels) {
    Correspondence c;
    c.world_point = Vec3(src.pointmap.at(p.x, p.y, 0), src.pointmap.at(p.x, p.y, 1), src.pointmap.at(p.x, p.y, 2));
    c.pixel = Vec2(p.x, p.y);
    if (flow) c.pixel += Vec2(flow->flow.at(p.x, p.y, 0), flow->flow.at(p.x, p.y, 1));
    out.push_back(c);
  }
  return out;
}

}  // namespace

std::vector<std::pair<int, int>> ba_edge_pairs(int frames) {
  std::vector<std::pair<int, int>> out;
  for (int stride = 1; stride <= 2; ++stride) {
    for (int i = 0; i + stride < frames; ++i) {
      out.emplace_back(i, i + stride);
      out.emplace_back(i + stride, i);
    }
  }
  return out;
}

MaBaResult run_ma_ba(const SequenceObservations& seq, const MaBaConfig& cfg, Segmenter* segmenter) {
  const int N = static_cast<int>(seq.frames.size());
  if (N < 2) throw Error(ErrorKind::InvalidArgument, "motion-aware BA needs at least 2 frames");
  seq.K.validate();
  cfg.filter.validate();
  cfg.ransac.validate();
  const int W = seq.K.width, H = seq.K.height;
  for (const auto& f : seq.frames) {
    f.validate();
    if (f.width() != W || f.height() != H) throw Error(ErrorKind::ShapeMismatch, "frame size differs from intrinsics");
  }

  MaBaResult res;
  std::vector<std::vector<Pixel>> filtered(N);
  for (int t = 0; t < N; ++t) {
    res.masks.push_back(frame_mask(seq, t, cfg, segmenter));
    filtered[t] = filter_points(seq.frames[t], cfg.filter);
  }

  // Initial poses: frame 0 from its own pointmap, frame t from frame t-1's
  // static points carried into frame t by the flow.
  for (int t = 0; t < N; ++t) {
    const int src = t == 0 ? 0 : t - 1;
    const FlowField* flow = t == 0 ? nullptr : seq.find_flow(src, t);
    const FrameObservations& obs = t == 0 || flow ? seq.frames[src] : seq.frames[t];
    const auto& pix = t == 0 || flow ? filtered[src] : filtered[t];
    const Mask& mask = t == 0 || flow ? res.masks[src] : res.masks[t];
    const auto stat = static_set(pix, mask);
    RansacConfig rc = cfg.ransac;
    rc.seed = cfg.ransac.seed + static_cast<std::uint64_t>(t);
    res.initial_poses.push_back(pnp_ransac(flow_correspondences(obs, flow, stat), seq.K, rc).pose);
  }

  BAProblem pb;
  pb.K = seq.K;
  pb.poses = res.initial_poses;
  pb.masks = res.masks;
  for (int t = 0; t < N; ++t) {
    Raster<double> inv(W, H, 1, 0.0);
    for (size_t p = 0; p < inv.data.size(); ++p) {
      const double d = seq.frames[t].depth.data[p];
      inv.data[p] = d > kMinDepth && std::isfinite(d) ? 1.0 / d : 1.0;
    }
    pb.inv_depths.push_back(std::move(inv));
  }
  for (const auto& [i, j] : ba_edge_pairs(N)) {
    const FlowField* flow = seq.find_flow(i, j);
    if (!flow) continue;
    BAEdge e;
    e.i = i;
    e.j = j;
    e.target = Image(W, H, 2, 0.0);
    e.weight = Raster<double>(W, H, 2, 0.0);
    const bool has_conf = !flow->confidence.empty();
    for (const auto& p : filtered[i]) {
      const double c = has_conf ? flow->confidence.at(p.x, p.y) : 1.0;
      for (int k = 0; k < 2; ++k) {
        e.target.at(p.x, p.y, k) = (k == 0 ? p.x : p.y) + flow->flow.at(p.x, p.y, k);
        e.weight.at(p.x, p.y, k) = c;
      }
    }
    pb.edges.push_back(std::move(e));
  }

  double cost = dba_cost(pb).cost;
  res.cost_history.push_back(cost);
  double damping = cfg.damping;
  for (int it = 0; it < cfg.max_ba_iters && damping < kMaxDamping;) {
    BAProblem cand = pb;
    try {
      apply_update(cand, dba_step(pb, damping, cfg.workers));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SingularSystem) throw;
      damping *= 10.0;
      continue;
    }
    const double c = dba_cost(cand).cost;
    if (!(c < cost)) {
      damping *= 10.0;
      continue;
    }
    ++it;
    const double change = cost - c;
    pb = std::move(cand);
    cost = c;
    res.cost_history.push_back(cost);
    damping *= 0.5;
    if (change < cfg.cost_tolerance) break;
  }
  res.poses = std::move(pb.poses);
  res.inv_depths = std::move(pb.inv_depths);
  return res;
}

}  // namespace magsplat
