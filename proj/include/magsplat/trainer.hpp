#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "magsplat/config.hpp"
#include "magsplat/deformation.hpp"
#include "magsplat/gaussian.hpp"
#include "magsplat/losses.hpp"
#include "magsplat/optim.hpp"
#include "magsplat/rasterizer.hpp"

namespace magsplat {

/// Frames t with t % every == every / 2 are held out (every = 0 keeps all).
std::vector<int> training_frames(int count, int every);
std::vector<int> heldout_frames(int count, int every);

struct TrainingData {
  CameraIntrinsics K;
  std::vector<Image> images;
  std::vector<Mask> masks;   // 1 = dynamic
  std::vector<SE3> poses;    // world-to-camera
  std::vector<int> train_frames;

  int frame_count() const { return static_cast<int>(images.size()); }
  /// Normalized time in [0, 1].
  double time_of(int frame) const;
  void validate() const;
};

/// Unconstrained stage-2 parameters: scales in log space, opacity as a logit.
struct GaussianParams {
  std::vector<double> mu, q, log_s, logit_o, sh;
};
GaussianParams pack_params(const GaussianScene& scene);
void unpack_params(const GaussianParams& p, GaussianScene& scene);

enum class Stage : std::uint32_t { Control = 1, Render = 2, Done = 3 };

struct IterationLog {
  std::int64_t iteration = 0;
  Stage stage = Stage::Control;
  int frame = 0;
  LossBreakdown loss;
  double psnr = 0.0;
  std::size_t controls = 0;
  double field_grad_norm = 0.0;
};

/// Everything needed to continue a run exactly.
struct TrainerState {
  GaussianScene scene;  // canonical
  ControlPointSet controls;
  DeformationField field;
  GaussianParams raw;
  AdamState field_adam;
  std::array<AdamState, 5> gaussian_adam;  // mu, q, log_s, logit_o, sh
  ControlImpact impact;
  std::int64_t iteration = 0;  // global, stage 1 then stage 2
};

class Trainer {
 public:
  /// Sets the field normalization from the scene bounds.
  Trainer(TrainConfig cfg, TrainingData data, GaussianScene scene, ControlPointSet controls);
  /// Continues from a saved state; the data must match the original run.
  Trainer(TrainConfig cfg, TrainingData data, TrainerState state);

  Stage stage() const;
  std::int64_t iteration() const { return state_.iteration; }
  std::int64_t total_iterations() const { return cfg_.stage1_iters + cfg_.stage2_iters; }

  void step();
  /// Steps until `iteration() == until` (or the end when until < 0).
  void run(std::int64_t until = -1);

  const TrainerState& state() const { return state_; }
  const TrainConfig& config() const { return cfg_; }
  const TrainingData& data() const { return data_; }
  const std::vector<IterationLog>& log() const { return log_; }

  /// Scene as seen at a frame: dynamic primitives warped by the field.
  GaussianScene scene_at(int frame) const;
  Image render_frame(int frame) const;

 private:
  void prepare_stage1();
  void prepare_stage2();
  void step_stage1(std::int64_t i);
  void step_stage2(std::int64_t i);
  RenderContext context(int frame) const;
  int draw_frame(const char* stream, std::int64_t i) const;

  TrainConfig cfg_;
  TrainingData data_;
  TrainerState state_;
  std::vector<IterationLog> log_;

  // Derived caches, rebuilt on demand.
  bool stage1_ready_ = false;
  bool stage2_ready_ = false;
  GaussianScene dynamic_scene_;
  NeighborWeights dynamic_weights_;
  ArapNeighbors arap_neighbors_;
  std::vector<ControlTransforms> frame_transforms_;
  double extent_ = 1.0;
};

/// Scene at a frame without a trainer (evaluation of saved results).
GaussianScene warp_to_time(const GaussianScene& canonical, const ControlPointSet& controls,
                           const DeformationField& field, int knn, double t, bool deformation = true);

}  // namespace magsplat
