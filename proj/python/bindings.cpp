#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <string>

#include "magsplat/config.hpp"
#include "magsplat/evaluate.hpp"
#include "magsplat/losses.hpp"
#include "magsplat/pipeline.hpp"
#include "magsplat/rasterizer.hpp"
#include "magsplat/sequence_io.hpp"
#include "magsplat/synthetic.hpp"

namespace py = pybind11;
using namespace magsplat;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array image_to_array(const Image& img) {
  Array out({img.height, img.width, img.channels});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

Image array_to_image(const Array& a) {
  if (a.ndim() != 3) throw Error(ErrorKind::ShapeMismatch, "expected an (H, W, C) array");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

void require_shape(const Array& a, std::initializer_list<py::ssize_t> shape, const char* name) {
  bool ok = a.ndim() == static_cast<py::ssize_t>(shape.size());
  size_t k = 0;
  for (py::ssize_t s : shape) {
    if (ok && s >= 0 && a.shape(k) != s) ok = false;
    ++k;
  }
  if (!ok) throw Error(ErrorKind::ShapeMismatch, std::string("bad shape for ") + name);
}

SE3 se3_from_matrix(const double* m) {
  Mat3 R;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) R(r, c) = m[4 * r + c];
  return SE3{Quaternion::from_matrix(R), Vec3(m[3], m[7], m[11])};
}

std::vector<SE3> poses_from_array(const Array& a, const char* name) {
  require_shape(a, {-1, 4, 4}, name);
  std::vector<SE3> out;
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out.push_back(se3_from_matrix(a.data() + 16 * i));
  return out;
}

Array poses_to_array(const std::vector<SE3>& poses) {
  Array out({static_cast<py::ssize_t>(poses.size()), py::ssize_t{4}, py::ssize_t{4}});
  double* d = out.mutable_data();
  for (const SE3& p : poses) {
    const Mat3 R = p.rotation_matrix();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) d[4 * r + c] = R(r, c);
      d[4 * r + 3] = p.translation[r];
    }
    d[12] = d[13] = d[14] = 0.0;
    d[15] = 1.0;
    d += 16;
  }
  return out;
}

py::dict metrics_dict(const TrajectoryMetrics& m) {
  py::dict d;
  d["ate"] = m.ate;
  d["rpe_trans"] = m.rpe_trans;
  d["rpe_rot_deg"] = m.rpe_rot;
  return d;
}

py::tuple render_py(const Array& means, const Array& quats, const Array& scales, const Array& opacities,
                    const Array& sh, int sh_degree, std::map<std::string, double> intrinsics, const Array& pose,
                    std::array<double, 3> background, int workers) {
  const py::ssize_t n = means.ndim() == 2 ? means.shape(0) : -1;
  require_shape(means, {n, 3}, "means");
  require_shape(quats, {n, 4}, "quats");
  require_shape(scales, {n, 3}, "scales");
  require_shape(opacities, {n}, "opacities");
  require_shape(sh, {n, 3 * sh_coeff_count(sh_degree)}, "sh");
  require_shape(pose, {4, 4}, "pose");
  GaussianScene scene;
  scene.sh_degree = sh_degree;
  const int ncoef = 3 * sh_coeff_count(sh_degree);
  for (py::ssize_t i = 0; i < n; ++i) {
    GaussianPrimitive g;
    g.mu = Vec3(means.at(i, 0), means.at(i, 1), means.at(i, 2));
    g.q = Quaternion{quats.at(i, 0), quats.at(i, 1), quats.at(i, 2), quats.at(i, 3)};
    g.s = Vec3(scales.at(i, 0), scales.at(i, 1), scales.at(i, 2));
    g.opacity = opacities.at(i);
    g.sh.assign(sh.data() + i * ncoef, sh.data() + (i + 1) * ncoef);
    scene.primitives.push_back(std::move(g));
  }
  RenderContext ctx;
  ctx.pose = se3_from_matrix(pose.data());
  ctx.K = CameraIntrinsics{intrinsics.at("fx"), intrinsics.at("fy"), intrinsics.at("cx"), intrinsics.at("cy"),
                           static_cast<int>(intrinsics.at("width")), static_cast<int>(intrinsics.at("height"))};
  ctx.background = Vec3(background[0], background[1], background[2]);
  ctx.workers = workers;
  RenderOutput out;
  {
    py::gil_scoped_release release;
    out = render(scene, ctx);
  }
  Array t({out.final_transmittance.height, out.final_transmittance.width});
  std::copy(out.final_transmittance.data.begin(), out.final_transmittance.data.end(), t.mutable_data());
  return py::make_tuple(image_to_array(out.image), t);
}

void synthesize(const std::string& out_dir, std::uint64_t seed, int frames, int width, int height, bool dynamic,
                double pointmap_noise, double flow_noise) {
  SyntheticSceneSpec spec;
  spec.frames = frames;
  spec.width = width;
  spec.height = height;
  spec.dynamic = dynamic;
  spec.pointmap_noise = pointmap_noise;
  spec.flow_noise = flow_noise;
  const SyntheticSequence seq = generate_synthetic_scene(spec, seed);
  write_sequence(out_dir, seq.observations, &seq.poses);
}

std::string run_pipeline_py(const std::string& seq_dir, const std::map<std::string, std::string>& train,
                            const std::map<std::string, std::string>& maba) {
  const SequenceDirectory seq = read_sequence(seq_dir);
  TrainConfig tc;
  apply_config(tc, train);
  tc.validate();
  MaBaConfig mc;
  apply_config(mc, maba);
  py::gil_scoped_release release;
  const PipelineResult res = run_pipeline(seq.observations, tc, mc, nullptr, seq.gt_poses ? &*seq.gt_poses : nullptr);
  return report_to_json(res.report);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pose-free dynamic Gaussian splatting engine";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      error(e.what());
    }
  });

  m.def("render", &render_py, py::arg("means"), py::arg("quats"), py::arg("scales"), py::arg("opacities"),
        py::arg("sh"), py::arg("sh_degree"), py::arg("intrinsics"), py::arg("pose"),
        py::arg("background") = std::array<double, 3>{0.0, 0.0, 0.0}, py::arg("workers") = 1,
        "Renders Gaussians with a world-to-camera 4x4 pose. Returns (image HxWx3, final transmittance HxW).");

  m.def("psnr", [](const Array& a, const Array& b) { return psnr(array_to_image(a), array_to_image(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(array_to_image(a), array_to_image(b)); });
  m.def("ms_ssim", [](const Array& a, const Array& b) { return ms_ssim(array_to_image(a), array_to_image(b)); });

  m.def(
      "trajectory_metrics",
      [](const Array& est, const Array& gt) {
        return metrics_dict(trajectory_metrics(poses_from_array(est, "est"), poses_from_array(gt, "gt")));
      },
      py::arg("est"), py::arg("gt"), "ATE/RPE of camera-to-world (N, 4, 4) trajectories after Sim(3) alignment.");
  m.def(
      "align_trajectory",
      [](const Array& est, const Array& gt) {
        return poses_to_array(align_trajectory(poses_from_array(est, "est"), poses_from_array(gt, "gt")));
      },
      py::arg("est"), py::arg("gt"));

  m.def("default_train_config", [] { return config_to_map(TrainConfig{}); });
  m.def("default_pose_config", [] { return config_to_map(MaBaConfig{}); });
  m.def(
      "config_hash",
      [](const std::map<std::string, std::string>& kv) {
        TrainConfig cfg;
        apply_config(cfg, kv);
        return config_hash(cfg);
      },
      py::arg("overrides") = std::map<std::string, std::string>{});

  m.def("synthesize", &synthesize, py::arg("out_dir"), py::arg("seed") = 0, py::arg("frames") = 24,
        py::arg("width") = 64, py::arg("height") = 48, py::arg("dynamic") = true, py::arg("pointmap_noise") = 0.0,
        py::arg("flow_noise") = 0.0, "Writes a synthetic sequence directory with ground-truth poses.");

  m.def(
      "read_gt_poses",
      [](const std::string& seq_dir) -> py::object {
        const SequenceDirectory seq = read_sequence(seq_dir);
        if (!seq.gt_poses) return py::none();
        return poses_to_array(*seq.gt_poses);
      },
      py::arg("seq_dir"), "World-to-camera ground-truth poses of a sequence directory, or None.");

  m.def("_run_pipeline", &run_pipeline_py, py::arg("seq_dir"), py::arg("train"), py::arg("pose"));
}
