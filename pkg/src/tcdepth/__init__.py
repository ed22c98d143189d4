"""Geometry, losses, attention and evaluation tools for temporally consistent monocular depth."""

from .errors import (BehindCameraError, EmptyDomainError, FormatError, InvalidInputError, LoadError,
                     TcDepthError)
from .geometry import (DepthMap, Intrinsics, Pose, backproject, bilinear_sample, depth_consistency_pair,
                       project, relative_pose, warp_backward)
from .losses import LossWeights, PhotometricConfig, cycle_mask, photometric_error, ssim, total_loss
from .tcm import FrameSample, TcmReport, align_to_reference, median_scale, tcm_sequence, tcm_sweep

__version__ = "0.1.0"

__all__ = [
    "BehindCameraError", "EmptyDomainError", "FormatError", "InvalidInputError", "LoadError", "TcDepthError",
    "DepthMap", "Intrinsics", "Pose", "backproject", "bilinear_sample", "depth_consistency_pair", "project",
    "relative_pose", "warp_backward", "LossWeights", "PhotometricConfig", "cycle_mask", "photometric_error",
    "ssim", "total_loss", "FrameSample", "TcmReport", "align_to_reference", "median_scale",
    "tcm_sequence", "tcm_sweep",
]
