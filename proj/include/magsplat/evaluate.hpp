#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "magsplat/geometry.hpp"
#include "magsplat/losses.hpp"

namespace magsplat {

struct EvalReport {
  std::vector<FrameMetrics> frames;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_ms_ssim = 0.0;
  std::optional<TrajectoryMetrics> trajectory;          // refined poses vs ground truth
  std::optional<TrajectoryMetrics> initial_trajectory;  // before dense BA
};

/// Per-frame metrics of rendered vs reference images, plus their means.
EvalReport evaluate_images(std::span<const Image> rendered, std::span<const Image> reference,
                           std::span<const int> frame_ids);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
void write_report(const std::string& json_path, const std::string& csv_path, const EvalReport& report);

}  // namespace magsplat
