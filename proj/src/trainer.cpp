#include "magsplat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "magsplat/initialization.hpp"
#include "magsplat/rng.hpp"

namespace magsplat {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

bool any_set(const Mask& m) {
  return std::any_of(m.data.begin(), m.data.end(), [](auto v) { return v != 0; });
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

std::vector<int> training_frames(int count, int every) {
  std::vector<int> out;
  for (int t = 0; t < count; ++t) {
    if (every == 0 || t % every != every / 2) out.push_back(t);
  }
  return out;
}

std::vector<int> heldout_frames(int count, int every) {
  std::vector<int> out;
  if (every == 0) return out;
  for (int t = 0; t < count; ++t) {
    if (t % every == every / 2) out.push_back(t);
  }
  return out;
}

double TrainingData::time_of(int frame) const {
  const int n = frame_count();
  return n > 1 ? static_cast<double>(frame) / (n - 1) : 0.0;
}

void TrainingData::validate() const {
  K.validate();
  const size_t n = images.size();
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "no frames to train on");
  if (masks.size() != n || poses.size() != n) throw Error(ErrorKind::LengthMismatch, "images, masks and poses differ in count");
  for (size_t t = 0; t < n; ++t) {
    if (images[t].width != K.width || images[t].height != K.height || images[t].channels != 3) {
      throw Error(ErrorKind::ShapeMismatch, "image does not match the intrinsics");
    }
    if (masks[t].width != K.width || masks[t].height != K.height) {
      throw Error(ErrorKind::ShapeMismatch, "mask does not match the intrinsics");
    }
  }
  if (train_frames.empty()) throw Error(ErrorKind::InvalidArgument, "no training frames");
  for (int f : train_frames) {
    if (f < 0 || f >= static_cast<int>(n)) throw Error(ErrorKind::InvalidArgument, "training frame out of range");
  }
}

GaussianParams pack_params(const GaussianScene& scene) {
  GaussianParams p;
  for (const auto& g : scene.primitives) {
    p.mu.insert(p.mu.end(), {g.mu.x(), g.mu.y(), g.mu.z()});
    p.q.insert(p.q.end(), {g.q.w, g.q.x, g.q.y, g.q.z});
    p.log_s.insert(p.log_s.end(), {std::log(g.s.x()), std::log(g.s.y()), std::log(g.s.z())});
    p.logit_o.push_back(std::log(g.opacity / (1.0 - g.opacity)));
    p.sh.insert(p.sh.end(), g.sh.begin(), g.sh.end());
  }
  return p;
}

void unpack_params(const GaussianParams& p, GaussianScene& scene) {
  const size_t stride = 3 * static_cast<size_t>(sh_coeff_count(scene.sh_degree));
  for (size_t i = 0; i < scene.size(); ++i) {
    auto& g = scene.primitives[i];
    g.mu = Vec3(p.mu[3 * i], p.mu[3 * i + 1], p.mu[3 * i + 2]);
    g.q = Quaternion{p.q[4 * i], p.q[4 * i + 1], p.q[4 * i + 2], p.q[4 * i + 3]};
    g.s = Vec3(std::exp(p.log_s[3 * i]), std::exp(p.log_s[3 * i + 1]), std::exp(p.log_s[3 * i + 2]));
    g.opacity = sigmoid(p.logit_o[i]);
    std::copy_n(p.sh.begin() + static_cast<std::ptrdiff_t>(i * stride), stride, g.sh.begin());
  }
}

Trainer::Trainer(TrainConfig cfg, TrainingData data, GaussianScene scene, ControlPointSet controls)
    : cfg_(std::move(cfg)), data_(std::move(data)) {
  cfg_.validate();
  data_.validate();
  scene.validate();
  controls.validate();
  state_.scene = std::move(scene);
  state_.controls = std::move(controls);
  state_.field = DeformationField(cfg_.field, stream_seed(cfg_.seed, "field"));
  const BoundingBox b = scene_bounds(state_.scene);
  state_.field.set_normalization(b.center(), 1.0 / std::max(b.max_half_extent(), 1e-6));
  state_.raw = pack_params(state_.scene);
  state_.field_adam.reset(state_.field.parameter_count());
  state_.gaussian_adam[0].reset(state_.raw.mu.size());
  state_.gaussian_adam[1].reset(state_.raw.q.size());
  state_.gaussian_adam[2].reset(state_.raw.log_s.size());
  state_.gaussian_adam[3].reset(state_.raw.logit_o.size());
  state_.gaussian_adam[4].reset(state_.raw.sh.size());
  extent_ = 1.0 / state_.field.inv_extent();
}

Trainer::Trainer(TrainConfig cfg, TrainingData data, TrainerState state)
    : cfg_(std::move(cfg)), data_(std::move(data)), state_(std::move(state)) {
  cfg_.validate();
  data_.validate();
  extent_ = 1.0 / state_.field.inv_extent();
}

Stage Trainer::stage() const {
  if (state_.iteration < cfg_.stage1_iters) return Stage::Control;
  if (state_.iteration < total_iterations()) return Stage::Render;
  return Stage::Done;
}

RenderContext Trainer::context(int frame) const {
  return RenderContext{data_.poses[frame], data_.K, Vec3::Zero(), cfg_.workers};
}

int Trainer::draw_frame(const char* stream, std::int64_t i) const {
  auto rng = make_stream(cfg_.seed, stream, static_cast<std::uint64_t>(i));
  std::uniform_int_distribution<size_t> pick(0, data_.train_frames.size() - 1);
  return data_.train_frames[pick(rng)];
}

void Trainer::run(std::int64_t until) {
  const std::int64_t end = until < 0 ? total_iterations() : std::min(until, total_iterations());
  while (state_.iteration < end) step();
}

void Trainer::step() {
  const Stage s = stage();
  if (s == Stage::Done) return;
  if (s == Stage::Control) {
    step_stage1(state_.iteration);
  } else {
    step_stage2(state_.iteration - cfg_.stage1_iters);
  }
  ++state_.iteration;
}

void Trainer::prepare_stage1() {
  dynamic_scene_ = GaussianScene{};
  dynamic_scene_.sh_degree = state_.scene.sh_degree;
  for (const auto& g : state_.scene.primitives) {
    if (!g.dynamic_label) continue;
    dynamic_scene_.primitives.push_back(g);
    dynamic_scene_.primitives.back().opacity = cfg_.stage1_opacity;
  }
  dynamic_weights_ = compute_neighbor_weights(dynamic_scene_, state_.controls, cfg_.knn);
  arap_neighbors_ = compute_arap_neighbors(state_.controls, 4);
  if (state_.impact.g.size() != state_.controls.size() ||
      state_.impact.gaussian_energy.size() != dynamic_scene_.size()) {
    state_.impact.reset(state_.controls.size(), dynamic_scene_.size());
  }
  stage1_ready_ = true;
}

void Trainer::step_stage1(std::int64_t i) {
  if (!stage1_ready_) prepare_stage1();
  IterationLog entry;
  entry.iteration = state_.iteration;
  entry.stage = Stage::Control;
  const int f = draw_frame("stage1-frame", i);
  entry.frame = f;
  entry.controls = state_.controls.size();
  const Mask& mask = data_.masks[f];
  if (!cfg_.deformation || dynamic_scene_.primitives.empty() || !any_set(mask)) {
    log_.push_back(entry);
    return;
  }

  // Second time for ARAP: another training frame.
  int f2 = f;
  if (data_.train_frames.size() > 1) {
    f2 = draw_frame("stage1-arap", i);
    if (f2 == f) {
      const auto it = std::find(data_.train_frames.begin(), data_.train_frames.end(), f);
      const size_t k = static_cast<size_t>(it - data_.train_frames.begin());
      f2 = data_.train_frames[(k + 1) % data_.train_frames.size()];
    }
  }

  const auto& field = state_.field;
  const auto& controls = state_.controls;
  FieldTape tape1, tape2;
  const ControlTransforms T1 = control_transforms(field, controls, data_.time_of(f), &tape1);
  const GaussianScene warped = warp_scene(dynamic_scene_, dynamic_weights_, controls, T1);
  const RenderContext ctx = context(f);
  const ForwardState fwd = render_forward(warped, ctx);

  Image target = data_.images[f];
  for (size_t p = 0; p < mask.pixel_count(); ++p) {
    if (!mask.data[p]) std::fill_n(target.data.begin() + static_cast<std::ptrdiff_t>(3 * p), 3, 0.0);
  }
  Image d_img;
  const ControlLoss lc = l_control(fwd.output().image, target, mask, cfg_.loss, &d_img);
  const GradientBuffers grads = render_backward(warped, ctx, fwd, d_img);
  TransformGradients tg = transform_gradients(dynamic_scene_, dynamic_weights_, controls, T1, grads);

  std::vector<double> g(field.parameter_count(), 0.0);
  double arap = 0.0;
  if (f2 != f && cfg_.loss.lambda_arap > 0.0 && controls.size() > 1) {
    const ControlTransforms T2 = control_transforms(field, controls, data_.time_of(f2), &tape2);
    ArapGradients ag;
    arap = l_arap(controls, T1, T2, arap_neighbors_, &ag);
    const double la = cfg_.loss.lambda_arap;
    for (size_t k = 0; k < controls.size(); ++k) {
      tg.d_rotation[k] += la * ag.t1.d_rotation[k];
      tg.d_translation[k] += la * ag.t1.d_translation[k];
      ag.t2.d_rotation[k] *= la;
      ag.t2.d_translation[k] *= la;
    }
    field.backward(tape2, ag.t2.d_rotation, ag.t2.d_translation, g);
  }
  field.backward(tape1, tg.d_rotation, tg.d_translation, g);
  adam_step(state_.field.parameters(), g, state_.field_adam,
            lr_schedule(i, cfg_.stage1_iters, cfg_.lr_start, cfg_.lr_end));

  accumulate_point_impact(grads, dynamic_weights_, dynamic_scene_, state_.impact);
  if ((i + 1) % cfg_.densify_interval == 0) {
    double mean = 0.0;
    for (double v : state_.impact.g) mean += v;
    mean /= static_cast<double>(state_.impact.g.size());
    if (mean > 0.0) {
      const size_t cap = static_cast<size_t>(cfg_.max_control_factor) * static_cast<size_t>(cfg_.n_control);
      state_.controls = densify_control_points(state_.controls, state_.impact, cfg_.densify_threshold * mean,
                                               dynamic_weights_, dynamic_scene_, std::max(cap, state_.controls.size()));
    }
    state_.impact.reset(state_.controls.size(), dynamic_scene_.size());
    prepare_stage1();
  }

  entry.loss.control = lc.value;
  entry.loss.arap = arap;
  entry.loss.total = lc.value + cfg_.loss.lambda_arap * arap;
  entry.field_grad_norm = norm(g);
  entry.psnr = psnr(fwd.output().image, target);
  log_.push_back(entry);
}

void Trainer::prepare_stage2() {
  frame_transforms_.clear();
  if (cfg_.deformation) {
    for (int f = 0; f < data_.frame_count(); ++f) {
      frame_transforms_.push_back(control_transforms(state_.field, state_.controls, data_.time_of(f)));
    }
  }
  arap_neighbors_ = compute_arap_neighbors(state_.controls, 4);
  stage2_ready_ = true;
}

void Trainer::step_stage2(std::int64_t i) {
  if (!stage2_ready_) prepare_stage2();
  IterationLog entry;
  entry.iteration = state_.iteration;
  entry.stage = Stage::Render;
  const int f = draw_frame("stage2-frame", i);
  entry.frame = f;
  entry.controls = state_.controls.size();

  GaussianScene& scene = state_.scene;
  const RenderContext ctx = context(f);
  NeighborWeights weights;
  GaussianScene warped;
  if (cfg_.deformation) {
    weights = compute_neighbor_weights(scene, state_.controls, cfg_.knn);
    warped = warp_scene(scene, weights, state_.controls, frame_transforms_[f]);
  } else {
    warped = scene;
  }
  const ForwardState fwd = render_forward(warped, ctx);
  Image d_img;
  const double lr_value = l_render(fwd.output().image, data_.images[f], cfg_.loss, &d_img);
  const GradientBuffers wg = render_backward(warped, ctx, fwd, d_img);
  // Field transforms and blend weights are constants here: the field gets
  // no gradient in this stage.
  GradientBuffers cg = cfg_.deformation ? pull_back_detached(scene, warped, weights, frame_transforms_[f], wg) : wg;

  std::vector<Vec3> warped_mu(scene.size());
  for (size_t j = 0; j < scene.size(); ++j) warped_mu[j] = warped.primitives[j].mu;
  std::vector<Vec3> d_rigid;
  const double rigid = l_rigid(scene, warped_mu, &d_rigid);
  for (size_t j = 0; j < scene.size(); ++j) cg.d_mu[j] += cfg_.loss.lambda_rigid * d_rigid[j];

  double arap = 0.0;
  if (cfg_.deformation && state_.controls.size() > 1 && data_.train_frames.size() > 1) {
    const int f2 = draw_frame("stage2-arap", i);
    arap = l_arap(state_.controls, frame_transforms_[f], frame_transforms_[f2], arap_neighbors_);
  }

  // Chain rule into the unconstrained parameters.
  GaussianParams grad;
  const size_t n = scene.size();
  grad.mu.resize(3 * n);
  grad.q.resize(4 * n);
  grad.log_s.resize(3 * n);
  grad.logit_o.resize(n);
  grad.sh.assign(cg.d_sh.begin(), cg.d_sh.end());
  for (size_t j = 0; j < n; ++j) {
    const auto& g = scene.primitives[j];
    for (int k = 0; k < 3; ++k) {
      grad.mu[3 * j + k] = cg.d_mu[j][k];
      grad.log_s[3 * j + k] = cg.d_s[j][k] * g.s[k];
    }
    for (int k = 0; k < 4; ++k) grad.q[4 * j + k] = cg.d_q[j][k];
    grad.logit_o[j] = cg.d_opacity[j] * g.opacity * (1.0 - g.opacity);
  }
  const double decay = lr_schedule(i, cfg_.stage2_iters, cfg_.lr_start, cfg_.lr_end) / cfg_.lr_start;
  auto& adam = state_.gaussian_adam;
  adam_step(state_.raw.mu, grad.mu, adam[0], cfg_.lr_position * extent_ * decay);
  adam_step(state_.raw.q, grad.q, adam[1], cfg_.lr_rotation * decay);
  adam_step(state_.raw.log_s, grad.log_s, adam[2], cfg_.lr_scale * decay);
  adam_step(state_.raw.logit_o, grad.logit_o, adam[3], cfg_.lr_opacity * decay);
  adam_step(state_.raw.sh, grad.sh, adam[4], cfg_.lr_color * decay);
  unpack_params(state_.raw, scene);

  entry.loss = total_loss(lr_value, 0.0, arap, rigid, cfg_.loss);
  entry.psnr = psnr(fwd.output().image, data_.images[f]);
  entry.field_grad_norm = 0.0;
  log_.push_back(entry);
}

GaussianScene warp_to_time(const GaussianScene& canonical, const ControlPointSet& controls,
                           const DeformationField& field, int knn, double t, bool deformation) {
  if (!deformation || controls.empty()) return canonical;
  const NeighborWeights w = compute_neighbor_weights(canonical, controls, knn);
  return warp_scene(canonical, w, controls, control_transforms(field, controls, t));
}

GaussianScene Trainer::scene_at(int frame) const {
  return warp_to_time(state_.scene, state_.controls, state_.field, cfg_.knn, data_.time_of(frame), cfg_.deformation);
}

Image Trainer::render_frame(int frame) const { return render(scene_at(frame), context(frame)).image; }

}  // namespace magsplat
