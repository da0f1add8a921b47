#include "magsplat/evaluate.hpp"

#include <fstream>

#include <json.hpp>

namespace magsplat {

namespace {

using nlohmann::json;

json trajectory_json(const TrajectoryMetrics& m) {
  return json{{"ate", m.ate}, {"rpe_trans", m.rpe_trans}, {"rpe_rot_deg", m.rpe_rot}};
}

TrajectoryMetrics trajectory_from(const json& j) {
  return TrajectoryMetrics{j.at("ate").get<double>(), j.at("rpe_trans").get<double>(),
                           j.at("rpe_rot_deg").get<double>()};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot open " + path + " for writing");
  out << text;
  if (!out) throw Error(ErrorKind::IoError, "failed writing " + path);
}

}  // namespace

EvalReport evaluate_images(std::span<const Image> rendered, std::span<const Image> reference,
                           std::span<const int> frame_ids) {
  if (rendered.size() != reference.size() || rendered.size() != frame_ids.size()) {
    throw Error(ErrorKind::LengthMismatch, "rendered, reference and frame lists differ in length");
  }
  EvalReport r;
  for (size_t k = 0; k < rendered.size(); ++k) {
    r.frames.push_back(frame_metrics(frame_ids[k], rendered[k], reference[k]));
    r.mean_psnr += r.frames.back().psnr;
    r.mean_ssim += r.frames.back().ssim;
    r.mean_ms_ssim += r.frames.back().ms_ssim;
  }
  if (!r.frames.empty()) {
    const double n = static_cast<double>(r.frames.size());
    r.mean_psnr /= n;
    r.mean_ssim /= n;
    r.mean_ms_ssim /= n;
  }
  return r;
}

std::string report_to_json(const EvalReport& r) {
  json j;
  j["frames"] = json::array();
  for (const auto& f : r.frames) {
    j["frames"].push_back({{"frame", f.frame}, {"psnr", f.psnr}, {"ssim", f.ssim}, {"ms_ssim", f.ms_ssim}});
  }
  j["mean"] = {{"psnr", r.mean_psnr}, {"ssim", r.mean_ssim}, {"ms_ssim", r.mean_ms_ssim}};
  if (r.trajectory) j["trajectory"] = trajectory_json(*r.trajectory);
  if (r.initial_trajectory) j["initial_trajectory"] = trajectory_json(*r.initial_trajectory);
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  EvalReport r;
  try {
    const json j = json::parse(text);
    for (const auto& f : j.at("frames")) {
      r.frames.push_back(FrameMetrics{f.at("frame").get<int>(), f.at("psnr").get<double>(),
                                      f.at("ssim").get<double>(), f.at("ms_ssim").get<double>()});
    }
    r.mean_psnr = j.at("mean").at("psnr").get<double>();
    r.mean_ssim = j.at("mean").at("ssim").get<double>();
    r.mean_ms_ssim = j.at("mean").at("ms_ssim").get<double>();
    if (j.contains("trajectory")) r.trajectory = trajectory_from(j["trajectory"]);
    if (j.contains("initial_trajectory")) r.initial_trajectory = trajectory_from(j["initial_trajectory"]);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::IoError, std::string("malformed report: ") + e.what());
  }
  return r;
}

void write_report(const std::string& json_path, const std::string& csv_path, const EvalReport& report) {
  if (!json_path.empty()) write_text(json_path, report_to_json(report));
  if (!csv_path.empty()) write_text(csv_path, metrics_csv(report.frames));
}

}  // namespace magsplat
