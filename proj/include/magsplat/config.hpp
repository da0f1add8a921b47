#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "magsplat/deformation.hpp"
#include "magsplat/losses.hpp"
#include "magsplat/pose.hpp"

namespace magsplat {

struct TrainConfig {
  int stage1_iters = 2000;
  int stage2_iters = 5000;
  double lr_start = 1e-4;
  double lr_end = 1e-7;
  int n_control = 512;
  int knn = 4;
  LossWeights loss;
  int densify_interval = 100;
  double densify_threshold = 4.0;  // impact relative to the mean impact
  int max_control_factor = 4;
  std::uint64_t seed = 0;
  FieldConfig field;

  // initialization
  int sh_degree = 1;
  int init_pixel_stride = 2;
  int init_frame_stride = 4;
  double init_opacity = 0.1;
  double dynamic_control_fraction = 0.7;
  // Opacity the frozen dynamic primitives are drawn with in stage 1. At the
  // init opacity the masked render is too faint to align against.
  double stage1_opacity = 0.95;

  // stage 2 base rates per parameter group, decayed like the field rate
  double lr_position = 1.6e-4;  // times the scene extent
  double lr_rotation = 1e-3;
  double lr_scale = 5e-3;       // log scale
  double lr_opacity = 0.05;     // logit opacity
  double lr_color = 2.5e-3;

  int holdout_every = 8;  // frames with t % holdout_every == holdout_every / 2 are held out; 0 disables
  bool deformation = true;
  int workers = 1;

  void validate() const;
};

/// Sequence-level settings used by estimate-poses and the full pipeline.
struct PoseSettings {
  MaBaConfig maba;
  void validate() const;
};

/// Flat key=value representation. Keys follow the struct field names;
/// nested fields use a dotted prefix (loss.lambda_arap, field.hidden_width).
std::map<std::string, std::string> config_to_map(const TrainConfig& cfg);
/// Applies the given keys on top of cfg. Unknown keys and malformed values
/// raise ConfigError.
void apply_config(TrainConfig& cfg, const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> config_to_map(const MaBaConfig& cfg);
void apply_config(MaBaConfig& cfg, const std::map<std::string, std::string>& kv);

/// Parses `key = value` lines; '#' starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> read_key_value_file(const std::string& path);
std::string format_key_values(const std::map<std::string, std::string>& kv);

/// FNV-1a over the canonical text of every field that affects results
/// (workers excluded).
std::uint64_t config_hash(const TrainConfig& cfg);

}  // namespace magsplat
