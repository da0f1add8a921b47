import numpy as np
import pytest

import magsplat

SH0 = 0.28209479177387814


def intrinsics(w=32, h=24, f=30.0):
    return {"fx": f, "fy": f, "cx": (w - 1) / 2, "cy": (h - 1) / 2, "width": w, "height": h}


def one_splat(rgb, opacity=0.99, scale=0.3):
    sh = ((np.asarray(rgb, float) - 0.5) / SH0).reshape(1, 3)
    return dict(
        means=np.array([[0.0, 0.0, 3.0]]),
        quats=np.array([[1.0, 0.0, 0.0, 0.0]]),
        scales=np.full((1, 3), scale),
        opacities=np.array([opacity]),
        sh=sh,
        sh_degree=0,
    )


def test_render_single_splat_and_background():
    img, trans = magsplat.render(**one_splat([0.8, 0.4, 0.2]), intrinsics=intrinsics(33, 25), pose=np.eye(4),
                                 background=(0.1, 0.2, 0.3))
    assert img.shape == (25, 33, 3) and trans.shape == (25, 33)
    # The splat centre projects exactly onto pixel (16, 12).
    assert np.allclose(img[12, 16], 0.99 * np.array([0.8, 0.4, 0.2]) + 0.01 * np.array([0.1, 0.2, 0.3]), atol=1e-9)
    assert trans[12, 16] == pytest.approx(0.01)
    assert np.allclose(img[0, 0], [0.1, 0.2, 0.3], atol=1e-6)
    assert trans[0, 0] == pytest.approx(1.0)


def test_render_conserves_blend_weights():
    rng = np.random.default_rng(0)
    n = 30
    scene = dict(
        means=np.column_stack([rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), rng.uniform(3, 6, n)]),
        quats=rng.normal(size=(n, 4)),
        scales=rng.uniform(0.05, 0.3, (n, 3)),
        opacities=rng.uniform(0.2, 0.9, n),
        sh=np.tile((1.0 - 0.5) / SH0, (n, 3)),
        sh_degree=0,
    )
    img, trans = magsplat.render(**scene, intrinsics=intrinsics(), pose=np.eye(4))
    assert np.abs(img[..., 0] + trans - 1.0).max() < 1e-6


def test_render_rejects_bad_shapes():
    s = one_splat([0.5, 0.5, 0.5])
    s["quats"] = np.zeros((2, 4))
    with pytest.raises(magsplat.Error, match="ShapeMismatch"):
        magsplat.render(**s, intrinsics=intrinsics(), pose=np.eye(4))


def test_image_metrics():
    rng = np.random.default_rng(1)
    a = rng.uniform(0.2, 0.8, (40, 40, 3))
    assert magsplat.psnr(a, a + 0.1) == pytest.approx(20.0)
    assert magsplat.ssim(a, a) == pytest.approx(1.0)
    assert magsplat.ms_ssim(a, a) == pytest.approx(1.0)
    assert magsplat.ssim(a, a + rng.normal(0, 0.1, a.shape)) < 0.9


def arc(n):
    out = []
    for i in range(n):
        t = 0.3 * i
        c, s = np.cos(0.05 * i), np.sin(0.05 * i)
        T = np.eye(4)
        T[:3, :3] = [[c, 0, s], [0, 1, 0], [-s, 0, c]]
        T[:3, 3] = [np.cos(t), 0.2 * np.sin(2 * t), np.sin(t) + 0.1 * i]
        out.append(T)
    return np.array(out)


def test_trajectory_metrics_sim3_invariance():
    gt = arc(10)
    assert magsplat.trajectory_metrics(gt, gt)["ate"] < 1e-9
    S = np.eye(4)
    S[:3, :3] = [[0, -1, 0], [1, 0, 0], [0, 0, 1]]
    S[:3, 3] = [1.0, -2.0, 0.5]
    est = S @ gt
    est[:, :3, 3] *= 2.5  # uniform scale about the origin
    m = magsplat.trajectory_metrics(est, gt)
    assert m["ate"] < 1e-9 and m["rpe_trans"] < 1e-9
    aligned = magsplat.align_trajectory(est, gt)
    assert np.abs(aligned - gt).max() < 1e-9


def test_config_defaults_and_hash():
    d = magsplat.default_train_config()
    assert d["n_control"] == "512"
    assert float(d["lr_start"]) == 1e-4 and float(d["lr_end"]) == pytest.approx(1e-7)
    assert magsplat.config_hash() == magsplat.config_hash({"workers": "4"})
    assert magsplat.config_hash() != magsplat.config_hash({"n_control": "128"})
    with pytest.raises(magsplat.Error, match="ConfigError"):
        magsplat.config_hash({"no_such_key": "1"})


def test_pipeline_on_tiny_sequence(tmp_path):
    seq = tmp_path / "seq"
    magsplat.synthesize(str(seq), seed=2, frames=10, width=32, height=24, pointmap_noise=0.01, flow_noise=0.2)
    gt = magsplat.read_gt_poses(str(seq))
    assert gt.shape == (10, 4, 4)
    report = magsplat.run_pipeline(seq, train={"stage1_iters": 20, "stage2_iters": 40, "n_control": 16,
                                               "densify_interval": 10, "deformation": True})
    assert [f["frame"] for f in report["frames"]] == [4]
    assert report["mean"]["psnr"] > 10.0
    assert report["trajectory"]["ate"] < 0.05
