"""Learning dense RGBD renderings from absolute 6DoF camera poses."""

from pose2rgbd.autodiff import Tensor, grad_check
from pose2rgbd.optim import AdamW
from pose2rgbd.poses import (
    EulerAngles,
    Pose,
    PoseBounds,
    RelativePose,
    denormalize_pose,
    normalize_pose,
)

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "EulerAngles",
    "Pose",
    "PoseBounds",
    "RelativePose",
    "Tensor",
    "denormalize_pose",
    "grad_check",
    "normalize_pose",
    "__version__",
]
