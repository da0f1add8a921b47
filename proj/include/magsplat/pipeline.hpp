#pragma once

#include <optional>
#include <vector>

#include "magsplat/config.hpp"
#include "magsplat/evaluate.hpp"
#include "magsplat/pose.hpp"
#include "magsplat/trainer.hpp"

namespace magsplat {

/// Training inputs from observations plus estimated poses and masks.
TrainingData make_training_data(const SequenceObservations& seq, const std::vector<SE3>& poses,
                                const std::vector<Mask>& masks, int holdout_every);

/// Gaussians from the training frames' ingested depth at the estimated
/// poses, and controls seeded on the dynamic ones.
Trainer make_trainer(const TrainConfig& cfg, const SequenceObservations& seq, const MaBaResult& poses,
                     const FilterConfig& filter);

/// Held-out frame metrics; trajectory errors when ground truth is given.
EvalReport evaluate_trainer(const Trainer& trainer, const std::vector<SE3>* gt_poses = nullptr,
                            const MaBaResult* poses = nullptr);

struct PipelineResult {
  MaBaResult poses;
  TrainerState state;
  EvalReport report;
  std::vector<IterationLog> log;
};

/// Pose estimation, both training stages and evaluation. Ground-truth poses
/// are used only for the trajectory metrics.
PipelineResult run_pipeline(const SequenceObservations& seq, const TrainConfig& train, const MaBaConfig& maba,
                            Segmenter* segmenter = nullptr, const std::vector<SE3>* gt_poses = nullptr);

}  // namespace magsplat
