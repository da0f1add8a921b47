#include "magsplat/pipeline.hpp"

#include "magsplat/initialization.hpp"
#include "magsplat/rng.hpp"

namespace magsplat {

TrainingData make_training_data(const SequenceObservations& seq, const std::vector<SE3>& poses,
                                const std::vector<Mask>& masks, int holdout_every) {
  TrainingData d;
  d.K = seq.K;
  for (const auto& f : seq.frames) d.images.push_back(f.image);
  d.masks = masks;
  d.poses = poses;
  d.train_frames = training_frames(static_cast<int>(seq.frames.size()), holdout_every);
  d.validate();
  return d;
}

Trainer make_trainer(const TrainConfig& cfg, const SequenceObservations& seq, const MaBaResult& poses,
                     const FilterConfig& filter) {
  cfg.validate();
  TrainingData data = make_training_data(seq, poses.poses, poses.masks, cfg.holdout_every);
  InitConfig init;
  init.filter = filter;
  init.pixel_stride = cfg.init_pixel_stride;
  init.frame_stride = cfg.init_frame_stride;
  init.opacity = cfg.init_opacity;
  init.sh_degree = cfg.sh_degree;
  // Ingested depth, not the BA inverse depths: those carry no prior and
  // follow the flow noise wherever the baseline is short.
  GaussianScene scene = init_gaussians_from_pointmaps(seq, poses.poses, poses.masks, data.train_frames, init);
  ControlPointSet controls =
      init_control_points(scene, cfg.n_control, cfg.dynamic_control_fraction, stream_seed(cfg.seed, "init"));
  return Trainer(cfg, std::move(data), std::move(scene), std::move(controls));
}

EvalReport evaluate_trainer(const Trainer& trainer, const std::vector<SE3>* gt_poses, const MaBaResult* poses) {
  const auto& data = trainer.data();
  const auto frames = heldout_frames(data.frame_count(), trainer.config().holdout_every);
  std::vector<Image> rendered;
  std::vector<Image> reference;
  for (int f : frames) {
    rendered.push_back(trainer.render_frame(f));
    reference.push_back(data.images[f]);
  }
  EvalReport report = evaluate_images(rendered, reference, frames);
  if (gt_poses) {
    const auto gt = invert_poses(*gt_poses);
    report.trajectory = trajectory_metrics(invert_poses(data.poses), gt);
    if (poses && !poses->initial_poses.empty()) {
      report.initial_trajectory = trajectory_metrics(invert_poses(poses->initial_poses), gt);
    }
  }
  return report;
}

PipelineResult run_pipeline(const SequenceObservations& seq, const TrainConfig& train, const MaBaConfig& maba,
                            Segmenter* segmenter, const std::vector<SE3>* gt_poses) {
  PipelineResult out;
  out.poses = run_ma_ba(seq, maba, segmenter);
  Trainer trainer = make_trainer(train, seq, out.poses, maba.filter);
  trainer.run();
  out.report = evaluate_trainer(trainer, gt_poses, &out.poses);
  out.state = trainer.state();
  out.log = trainer.log();
  return out;
}

}  // namespace magsplat
