#include "magsplat/sequence_io.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include "magsplat/config.hpp"
#include "magsplat/image_io.hpp"
#include "magsplat/raster_io.hpp"

namespace magsplat {

namespace fs = std::filesystem;

namespace {

std::string frame_name(int t, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d.%s", t, ext);
  return buf;
}

std::string pair_name(int i, int j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d_%04d.ras", i, j);
  return buf;
}

double number(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw Error(ErrorKind::IoError, "intrinsics.txt lacks " + key);
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw Error(ErrorKind::IoError, "bad value for " + key + " in intrinsics.txt");
  }
}

}  // namespace

void write_poses(const std::string& path, const std::vector<SE3>& world_to_camera) {
  std::vector<StampedPose> out;
  const auto c2w = invert_poses(world_to_camera);
  for (size_t t = 0; t < c2w.size(); ++t) out.push_back({static_cast<double>(t), c2w[t]});
  write_trajectory(path, out);
}

std::vector<SE3> read_poses(const std::string& path) {
  std::vector<SE3> c2w;
  for (const auto& p : read_trajectory(path)) c2w.push_back(p.pose);
  return invert_poses(c2w);
}

void write_pose_estimate(const std::string& dir, const MaBaResult& result) {
  const fs::path root(dir);
  fs::create_directories(root / "masks");
  fs::create_directories(root / "inv_depth");
  write_poses((root / "poses.txt").string(), result.poses);
  write_poses((root / "initial_poses.txt").string(), result.initial_poses);
  for (size_t t = 0; t < result.masks.size(); ++t) {
    write_raster(result.masks[t], (root / "masks" / frame_name(static_cast<int>(t), "ras")).string());
  }
  for (size_t t = 0; t < result.inv_depths.size(); ++t) {
    write_raster(result.inv_depths[t], (root / "inv_depth" / frame_name(static_cast<int>(t), "ras")).string());
  }
  std::ofstream out(root / "cost_history.txt");
  out << std::setprecision(17);
  for (double c : result.cost_history) out << c << "\n";
  if (!out) throw Error(ErrorKind::IoError, "cannot write cost_history.txt in " + dir);
}

MaBaResult read_pose_estimate(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw Error(ErrorKind::IoError, dir + " is not a directory");
  MaBaResult r;
  r.poses = read_poses((root / "poses.txt").string());
  if (fs::exists(root / "initial_poses.txt")) r.initial_poses = read_poses((root / "initial_poses.txt").string());
  for (size_t t = 0; t < r.poses.size(); ++t) {
    const int i = static_cast<int>(t);
    r.masks.push_back(read_mask((root / "masks" / frame_name(i, "ras")).string()));
    const fs::path inv = root / "inv_depth" / frame_name(i, "ras");
    if (fs::exists(inv)) r.inv_depths.push_back(read_raster_f64(inv.string()));
  }
  if (!r.inv_depths.empty() && r.inv_depths.size() != r.poses.size()) {
    throw Error(ErrorKind::LengthMismatch, "inverse depth maps and poses differ in count");
  }
  std::ifstream in(root / "cost_history.txt");
  for (double c; in >> c;) r.cost_history.push_back(c);
  return r;
}

void write_sequence(const std::string& dir, const SequenceObservations& seq, const std::vector<SE3>* gt_poses) {
  const fs::path root(dir);
  for (const char* sub : {"frames", "pointmaps", "conf", "depth", "mask", "dynconf", "flow", "flow_conf"}) {
    fs::create_directories(root / sub);
  }
  const auto& K = seq.K;
  std::map<std::string, std::string> kv;
  auto put = [&](const char* k, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    kv[k] = buf;
  };
  put("fx", K.fx);
  put("fy", K.fy);
  put("cx", K.cx);
  put("cy", K.cy);
  kv["width"] = std::to_string(K.width);
  kv["height"] = std::to_string(K.height);
  {
    FILE* f = std::fopen((root / "intrinsics.txt").c_str(), "wb");
    if (!f) throw Error(ErrorKind::IoError, "cannot write intrinsics.txt in " + dir);
    const std::string text = format_key_values(kv);
    std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
  }

  for (size_t t = 0; t < seq.frames.size(); ++t) {
    const auto& fr = seq.frames[t];
    const int i = static_cast<int>(t);
    write_png((root / "frames" / frame_name(i, "png")).string(), fr.image);
    write_raster(fr.pointmap, (root / "pointmaps" / frame_name(i, "ras")).string());
    write_raster(fr.confidence, (root / "conf" / frame_name(i, "ras")).string());
    write_raster(fr.depth, (root / "depth" / frame_name(i, "ras")).string());
    write_raster(fr.motion_mask, (root / "mask" / frame_name(i, "ras")).string());
    if (!fr.initial_dyn_confidence.empty()) {
      write_raster(fr.initial_dyn_confidence, (root / "dynconf" / frame_name(i, "ras")).string());
    }
  }
  for (const auto& f : seq.flows) {
    write_raster(f.flow, (root / "flow" / pair_name(f.from, f.to)).string());
    if (!f.confidence.empty()) write_raster(f.confidence, (root / "flow_conf" / pair_name(f.from, f.to)).string());
  }
  if (gt_poses) write_poses((root / "poses_gt.txt").string(), *gt_poses);
}

SequenceDirectory read_sequence(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw Error(ErrorKind::IoError, dir + " is not a directory");

  SequenceDirectory out;
  auto& seq = out.observations;
  const auto kv = read_key_value_file((root / "intrinsics.txt").string());
  seq.K.fx = number(kv, "fx");
  seq.K.fy = number(kv, "fy");
  seq.K.cx = number(kv, "cx");
  seq.K.cy = number(kv, "cy");
  seq.K.width = static_cast<int>(number(kv, "width"));
  seq.K.height = static_cast<int>(number(kv, "height"));
  seq.K.validate();

  for (int t = 0;; ++t) {
    const fs::path png = root / "frames" / frame_name(t, "png");
    if (!fs::exists(png)) break;
    FrameObservations fr;
    fr.image = read_png(png.string());
    fr.pointmap = read_raster_f64((root / "pointmaps" / frame_name(t, "ras")).string());
    fr.confidence = read_raster_f64((root / "conf" / frame_name(t, "ras")).string());
    fr.depth = read_raster_f64((root / "depth" / frame_name(t, "ras")).string());
    fr.motion_mask = read_mask((root / "mask" / frame_name(t, "ras")).string());
    const fs::path dc = root / "dynconf" / frame_name(t, "ras");
    if (fs::exists(dc)) {
      fr.initial_dyn_confidence = read_raster_f64(dc.string());
    } else {
      fr.initial_dyn_confidence = Raster<double>(fr.image.width, fr.image.height, 1, 0.0);
      for (size_t k = 0; k < fr.motion_mask.data.size(); ++k) fr.initial_dyn_confidence.data[k] = fr.motion_mask.data[k];
    }
    if (fr.image.width != seq.K.width || fr.image.height != seq.K.height) {
      throw Error(ErrorKind::ShapeMismatch, "frame " + std::to_string(t) + " does not match intrinsics size");
    }
    fr.validate();
    seq.frames.push_back(std::move(fr));
  }
  if (seq.frames.empty()) throw Error(ErrorKind::IoError, "no frames under " + (root / "frames").string());

  if (fs::is_directory(root / "flow")) {
    std::vector<std::pair<int, int>> pairs;
    for (const auto& e : fs::directory_iterator(root / "flow")) {
      int i = 0, j = 0;
      char tail = 0;
      if (std::sscanf(e.path().filename().c_str(), "%d_%d.ra%c", &i, &j, &tail) == 3 && tail == 's') {
        pairs.emplace_back(i, j);
      }
    }
    std::sort(pairs.begin(), pairs.end());
    const int n = static_cast<int>(seq.frames.size());
    for (auto [i, j] : pairs) {
      if (i < 0 || j < 0 || i >= n || j >= n) continue;
      FlowField f;
      f.from = i;
      f.to = j;
      f.flow = read_raster_f64((root / "flow" / pair_name(i, j)).string());
      if (f.flow.width != seq.K.width || f.flow.height != seq.K.height || f.flow.channels != 2) {
        throw Error(ErrorKind::ShapeMismatch, "flow " + pair_name(i, j) + " has the wrong shape");
      }
      const fs::path fc = root / "flow_conf" / pair_name(i, j);
      if (fs::exists(fc)) f.confidence = read_raster_f64(fc.string());
      seq.flows.push_back(std::move(f));
    }
  }
  const fs::path gt = root / "poses_gt.txt";
  if (fs::exists(gt)) {
    out.gt_poses = read_poses(gt.string());
    if (out.gt_poses->size() != seq.frames.size()) {
      throw Error(ErrorKind::LengthMismatch, "poses_gt.txt and frames differ in count");
    }
  }
  return out;
}

}  // namespace magsplat
