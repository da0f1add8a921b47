"""Pose-free dynamic Gaussian splatting."""

import json

from . import _core
from ._core import (
    Error,
    align_trajectory,
    config_hash,
    default_pose_config,
    default_train_config,
    ms_ssim,
    psnr,
    read_gt_poses,
    render,
    ssim,
    synthesize,
    trajectory_metrics,
)

__all__ = [
    "Error",
    "align_trajectory",
    "config_hash",
    "default_pose_config",
    "default_train_config",
    "ms_ssim",
    "psnr",
    "read_gt_poses",
    "render",
    "run_pipeline",
    "ssim",
    "synthesize",
    "trajectory_metrics",
]


def _as_strings(kv):
    return {str(k): str(v).lower() if isinstance(v, bool) else str(v) for k, v in (kv or {}).items()}


def run_pipeline(seq_dir, train=None, pose=None):
    """Pose estimation, training and held-out evaluation of a sequence directory.

    `train` and `pose` are config overrides keyed like the config files.
    Returns the metric report as a dict.
    """
    return json.loads(_core._run_pipeline(str(seq_dir), _as_strings(train), _as_strings(pose)))

