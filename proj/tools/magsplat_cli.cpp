#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "magsplat/checkpoint.hpp"
#include "magsplat/config.hpp"
#include "magsplat/evaluate.hpp"
#include "magsplat/image_io.hpp"
#include "magsplat/pipeline.hpp"
#include "magsplat/raster_io.hpp"
#include "magsplat/sequence_io.hpp"
#include "magsplat/synthetic.hpp"

using namespace magsplat;
namespace fs = std::filesystem;

namespace {

// One string option per config key; only the keys given on the command line
// are applied, on top of the config file.
struct KeyOptions {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void add(CLI::App* app, const std::map<std::string, std::string>& defaults) {
    for (const auto& [key, def] : defaults) {
      options[key] = app->add_option("--" + key, values[key], "default " + def);
    }
  }
  std::map<std::string, std::string> given() const {
    std::map<std::string, std::string> out;
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) out[key] = values.at(key);
    }
    return out;
  }
};

template <typename C>
C resolve_config(const std::string& file, const KeyOptions& flags) {
  C cfg;
  if (!file.empty()) apply_config(cfg, read_key_value_file(file));
  apply_config(cfg, flags.given());
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
}

std::string log_header() {
  return "iteration,stage,frame,total,render,control,arap,rigid,psnr,controls,field_grad_norm\n";
}

std::string log_rows(const std::vector<IterationLog>& log) {
  std::ostringstream s;
  s << std::setprecision(10);
  for (const auto& e : log) {
    s << e.iteration << ',' << static_cast<int>(e.stage) << ',' << e.frame << ',' << e.loss.total << ','
      << e.loss.render << ',' << e.loss.control << ',' << e.loss.arap << ',' << e.loss.rigid << ',' << e.psnr << ','
      << e.controls << ',' << e.field_grad_norm << '\n';
  }
  return s.str();
}

struct RunFiles {
  TrainConfig cfg;
  Checkpoint ckpt;
};

RunFiles load_run(const std::string& run_dir) {
  const fs::path dir(run_dir);
  RunFiles r;
  apply_config(r.cfg, read_key_value_file((dir / "config.txt").string()));
  r.ckpt = load_checkpoint((dir / "checkpoint.mck").string(), r.cfg);
  return r;
}

int cmd_synth(const std::string& out, std::uint64_t seed, const SyntheticSceneSpec& spec) {
  const SyntheticSequence seq = generate_synthetic_scene(spec, seed);
  write_sequence(out, seq.observations, &seq.poses);
  std::printf("wrote %d frames to %s (dynamic coverage %.3f)\n", seq.frame_count(), out.c_str(),
              dynamic_coverage(seq));
  return 0;
}

int cmd_estimate(const std::string& seq_dir, const std::string& out, const MaBaConfig& cfg,
                 const std::string& segments) {
  const SequenceDirectory seq = read_sequence(seq_dir);
  std::unique_ptr<Segmenter> seg;
  if (!segments.empty()) seg = std::make_unique<RasterSegmenter>(segments);
  const MaBaResult r = run_ma_ba(seq.observations, cfg, seg.get());
  write_pose_estimate(out, r);
  std::printf("estimated %zu poses, BA cost %.6g -> %.6g\n", r.poses.size(),
              r.cost_history.empty() ? 0.0 : r.cost_history.front(),
              r.cost_history.empty() ? 0.0 : r.cost_history.back());
  if (seq.gt_poses) {
    const auto gt = invert_poses(*seq.gt_poses);
    const auto m = trajectory_metrics(invert_poses(r.poses), gt);
    std::printf("ATE %.6g  RPE trans %.6g  RPE rot %.6g deg\n", m.ate, m.rpe_trans, m.rpe_rot);
  }
  return 0;
}

int cmd_train(const std::string& seq_dir, const std::string& poses_dir, const std::string& out,
              const TrainConfig& cfg, const std::string& resume, int checkpoint_every) {
  const SequenceDirectory seq = read_sequence(seq_dir);
  const MaBaResult poses = read_pose_estimate(poses_dir);
  const fs::path dir(out);
  fs::create_directories(dir);
  write_text(dir / "config.txt", format_key_values(config_to_map(cfg)));

  std::optional<Trainer> trainer;
  if (resume.empty()) {
    trainer.emplace(make_trainer(cfg, seq.observations, poses, FilterConfig{}));
  } else {
    Checkpoint ck = load_checkpoint(resume, cfg);
    trainer.emplace(cfg, make_training_data(seq.observations, poses.poses, poses.masks, cfg.holdout_every),
                    std::move(ck.state));
  }
  const fs::path log_path = dir / "train_log.csv";
  const bool append = !resume.empty() && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!append) log << log_header();
  size_t logged = 0;
  while (trainer->stage() != Stage::Done) {
    const std::int64_t next =
        checkpoint_every > 0 ? std::min(trainer->iteration() + checkpoint_every, trainer->total_iterations())
                             : trainer->total_iterations();
    trainer->run(next);
    const auto& entries = trainer->log();
    log << log_rows(std::vector<IterationLog>(entries.begin() + static_cast<std::ptrdiff_t>(logged), entries.end()));
    logged = entries.size();
    save_checkpoint((dir / "checkpoint.mck").string(), *trainer);
    const auto& last = entries.back();
    std::printf("iteration %lld stage %d loss %.5f psnr %.2f controls %zu\n",
                static_cast<long long>(trainer->iteration()), static_cast<int>(last.stage), last.loss.total,
                last.psnr, last.controls);
  }
  if (!log) throw Error(ErrorKind::IoError, "cannot write " + log_path.string());
  return 0;
}

Trainer restore_trainer(const std::string& seq_dir, const std::string& poses_dir, const std::string& run_dir,
                        SequenceDirectory& seq, MaBaResult& poses) {
  seq = read_sequence(seq_dir);
  poses = read_pose_estimate(poses_dir);
  RunFiles run = load_run(run_dir);
  return Trainer(run.cfg, make_training_data(seq.observations, poses.poses, poses.masks, run.cfg.holdout_every),
                 std::move(run.ckpt.state));
}

int cmd_render(const std::string& seq_dir, const std::string& poses_dir, const std::string& run_dir,
               const std::string& out, bool all_frames, bool raw) {
  SequenceDirectory seq;
  MaBaResult poses;
  const Trainer tr = restore_trainer(seq_dir, poses_dir, run_dir, seq, poses);
  const int n = tr.data().frame_count();
  std::vector<int> frames;
  if (all_frames) {
    for (int t = 0; t < n; ++t) frames.push_back(t);
  } else {
    frames = heldout_frames(n, tr.config().holdout_every);
  }
  fs::create_directories(out);
  for (int f : frames) {
    const Image img = tr.render_frame(f);
    char name[32];
    std::snprintf(name, sizeof name, "%04d", f);
    write_png((fs::path(out) / (std::string(name) + ".png")).string(), img);
    if (raw) write_raster(img, (fs::path(out) / (std::string(name) + ".ras")).string());
  }
  std::printf("rendered %zu frames to %s\n", frames.size(), out.c_str());
  return 0;
}

int cmd_eval(const std::string& seq_dir, const std::string& poses_dir, const std::string& run_dir,
             const std::string& json, const std::string& csv) {
  SequenceDirectory seq;
  MaBaResult poses;
  const Trainer tr = restore_trainer(seq_dir, poses_dir, run_dir, seq, poses);
  const EvalReport r = evaluate_trainer(tr, seq.gt_poses ? &*seq.gt_poses : nullptr, &poses);
  write_report(json, csv, r);
  std::printf("held-out frames %zu  PSNR %.3f  SSIM %.4f  MS-SSIM %.4f\n", r.frames.size(), r.mean_psnr,
              r.mean_ssim, r.mean_ms_ssim);
  if (r.trajectory) std::printf("ATE %.6g (before BA %.6g)\n", r.trajectory->ate,
                                r.initial_trajectory ? r.initial_trajectory->ate : r.trajectory->ate);
  return 0;
}

int cmd_metrics(const std::string& est, const std::string& gt, const std::string& image, const std::string& ref) {
  if (!est.empty() || !gt.empty()) {
    if (est.empty() || gt.empty()) throw Error(ErrorKind::ConfigError, "--est and --gt go together");
    std::vector<SE3> a, b;
    for (const auto& p : read_trajectory(est)) a.push_back(p.pose);
    for (const auto& p : read_trajectory(gt)) b.push_back(p.pose);
    const auto m = trajectory_metrics(a, b);
    std::printf("ate,rpe_trans,rpe_rot_deg\n%.10g,%.10g,%.10g\n", m.ate, m.rpe_trans, m.rpe_rot);
  }
  if (!image.empty() || !ref.empty()) {
    if (image.empty() || ref.empty()) throw Error(ErrorKind::ConfigError, "--image and --reference go together");
    const auto m = frame_metrics(0, read_png(image), read_png(ref));
    std::printf("psnr,ssim,ms_ssim\n%.10g,%.10g,%.10g\n", m.psnr, m.ssim, m.ms_ssim);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-free dynamic Gaussian splatting"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic sequence directory");
  std::string synth_out;
  std::uint64_t synth_seed = 0;
  SyntheticSceneSpec spec;
  std::vector<double> object_center, object_half;
  bool static_only = false;
  double travel = spec.object_travel.x();
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Noise seed");
  synth->add_option("--frames", spec.frames);
  synth->add_option("--width", spec.width);
  synth->add_option("--height", spec.height);
  synth->add_option("--focal-ratio", spec.focal_ratio);
  synth->add_flag("--static", static_only, "No moving object");
  synth->add_option("--object-center", object_center, "x y z")->expected(3);
  synth->add_option("--object-half-extent", object_half, "x y z")->expected(3);
  synth->add_option("--object-travel", travel, "Displacement along x over the sequence");
  synth->add_option("--object-spin", spec.object_spin, "Radians about y over the sequence");
  synth->add_option("--camera-travel", spec.camera_travel);
  synth->add_option("--surface-spacing", spec.surface_spacing);
  synth->add_option("--pointmap-noise", spec.pointmap_noise);
  synth->add_option("--depth-noise", spec.depth_noise);
  synth->add_option("--flow-noise", spec.flow_noise);

  // estimate-poses
  auto* est = app.add_subcommand("estimate-poses", "Masked PnP-RANSAC and dense bundle adjustment");
  std::string est_seq, est_out, est_config, est_segments;
  KeyOptions est_keys;
  est->add_option("--seq", est_seq, "Sequence directory")->required();
  est->add_option("--out", est_out, "Output directory")->required();
  est->add_option("--config", est_config, "key = value file");
  est->add_option("--segments", est_segments, "Directory of precomputed segment rasters");
  est_keys.add(est, config_to_map(MaBaConfig{}));

  // train
  auto* train = app.add_subcommand("train", "Two-stage training");
  std::string tr_seq, tr_poses, tr_out, tr_config, tr_resume;
  int tr_every = 0;
  KeyOptions tr_keys;
  train->add_option("--seq", tr_seq)->required();
  train->add_option("--poses", tr_poses, "Output directory of estimate-poses")->required();
  train->add_option("--out", tr_out, "Run directory")->required();
  train->add_option("--config", tr_config, "key = value file");
  train->add_option("--resume", tr_resume, "Checkpoint to continue from");
  train->add_option("--checkpoint-every", tr_every, "Save every N iterations (0: at the end)");
  tr_keys.add(train, config_to_map(TrainConfig{}));

  // render
  auto* rend = app.add_subcommand("render", "Render frames from a trained run");
  std::string r_seq, r_poses, r_run, r_out;
  bool r_all = false, r_raw = false;
  rend->add_option("--seq", r_seq)->required();
  rend->add_option("--poses", r_poses)->required();
  rend->add_option("--run", r_run)->required();
  rend->add_option("--out", r_out)->required();
  rend->add_flag("--all", r_all, "Every frame instead of the held-out ones");
  rend->add_flag("--raw", r_raw, "Also write float RAS1 images");

  // eval
  auto* ev = app.add_subcommand("eval", "Held-out metrics and trajectory errors");
  std::string e_seq, e_poses, e_run, e_json, e_csv;
  ev->add_option("--seq", e_seq)->required();
  ev->add_option("--poses", e_poses)->required();
  ev->add_option("--run", e_run)->required();
  ev->add_option("--json", e_json, "Report path");
  ev->add_option("--csv", e_csv, "Per-frame CSV path");

  // metrics
  auto* met = app.add_subcommand("metrics", "Compare trajectories or images");
  std::string m_est, m_gt, m_img, m_ref;
  met->add_option("--est", m_est, "Estimated TUM trajectory");
  met->add_option("--gt", m_gt, "Reference TUM trajectory");
  met->add_option("--image", m_img, "Rendered PNG");
  met->add_option("--reference", m_ref, "Reference PNG");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      spec.dynamic = !static_only;
      spec.object_travel = Vec3(travel, 0.0, 0.0);
      if (!object_center.empty()) spec.object_center = Vec3(object_center[0], object_center[1], object_center[2]);
      if (!object_half.empty()) spec.object_half_extent = Vec3(object_half[0], object_half[1], object_half[2]);
      return cmd_synth(synth_out, synth_seed, spec);
    }
    if (*est) {
      PoseSettings ps;
      ps.maba = resolve_config<MaBaConfig>(est_config, est_keys);
      ps.validate();
      return cmd_estimate(est_seq, est_out, ps.maba, est_segments);
    }
    if (*train) {
      const TrainConfig cfg = resolve_config<TrainConfig>(tr_config, tr_keys);
      cfg.validate();
      return cmd_train(tr_seq, tr_poses, tr_out, cfg, tr_resume, tr_every);
    }
    if (*rend) return cmd_render(r_seq, r_poses, r_run, r_out, r_all, r_raw);
    if (*ev) return cmd_eval(e_seq, e_poses, e_run, e_json, e_csv);
    if (*met) return cmd_metrics(m_est, m_gt, m_img, m_ref);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
