"""Scikit-learn style front door for the pose-to-RGBD regressor.

Raw arrays in, raw arrays out: X holds absolute poses row-wise, y holds
RGBD frames with RGB in [0,1] and depth in the caller's metric unit. The
estimator learns the pose bounds and depth range from the training data and
applies them on predict, so callers never touch the internal [-1,1]
encodings.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from pose2rgbd.datastore import LoadedDataset
from pose2rgbd.network import ModelConfig, build_model
from pose2rgbd.poses import (
    MODE_EULER,
    MODE_QUAT,
    EulerAngles,
    Pose,
    PoseBounds,
    euler_to_quat,
)
from pose2rgbd.training import TrainReport, train


def poses_from_rows(X: np.ndarray, mode: str) -> list[Pose]:
    """Rows of [x,y,z,qw,qx,qy,qz] (quaternion mode) or
    [x,y,z,roll,pitch,yaw] (Euler mode) to Pose objects."""
    width = 7 if mode == MODE_QUAT else 6
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != width:
        raise ValueError(
            f"pose rows for mode {mode!r} need {width} columns, got {X.shape[1]}"
        )
    poses = []
    for row in X:
        if mode == MODE_QUAT:
            poses.append(Pose(row[:3], row[3:7]))
        else:
            poses.append(Pose(row[:3], euler_to_quat(EulerAngles(*row[3:6]))))
    return poses


def check_rgbd_frames(y: np.ndarray, resolution: int) -> np.ndarray:
    """Validate (n,H,W,4) frames: square, matching the configured output
    resolution, RGB inside [0,1], depth finite."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 4 or y.shape[3] != 4:
        raise ValueError("y must have shape (n, H, W, 4)")
    if y.shape[1] != y.shape[2]:
        raise ValueError("frames must be square")
    if y.shape[1] != resolution:
        raise ValueError(
            f"frames are {y.shape[1]}x{y.shape[2]} but the model renders "
            f"{resolution}x{resolution}"
        )
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    rgb = y[..., :3]
    if rgb.min() < 0.0 or rgb.max() > 1.0:
        raise ValueError("RGB channels must lie in [0, 1]")
    return y


class Pose2RGBDRegressor(BaseEstimator):
    """Learns a mapping from absolute 6DoF poses to dense RGBD images.

    X is (n, 7) pose rows [x,y,z,qw,qx,qy,qz] by default, or (n, 6)
    [x,y,z,roll,pitch,yaw] with ``input_mode="6dof"``. y is (n, H, W, 4)
    with RGB in [0,1] and depth in meters (any consistent unit works).
    ``predict`` returns frames in the same layout and units.
    """

    def __init__(
        self,
        output_resolution: int = 64,
        initial_channels: int = 128,
        channel_schedule=None,
        slices: int = 10,
        bottleneck_depth: int = 3,
        slice_loss_weight: float = 1.0,
        input_mode: str = MODE_QUAT,
        epochs: int = 100,
        batch_size: int = 8,
        lr: float = 0.01,
        weight_decay: float = 0.0,
        val_split: float = 0.2,
        max_steps=None,
        seed: int = 0,
        verbose: bool = False,
    ):
        self.output_resolution = output_resolution
        self.initial_channels = initial_channels
        self.channel_schedule = channel_schedule
        self.slices = slices
        self.bottleneck_depth = bottleneck_depth
        self.slice_loss_weight = slice_loss_weight
        self.input_mode = input_mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.val_split = val_split
        self.max_steps = max_steps
        self.seed = seed
        self.verbose = verbose

    def _config(self) -> ModelConfig:
        return ModelConfig(
            output_resolution=self.output_resolution,
            initial_channels=self.initial_channels,
            channel_schedule=(
                tuple(self.channel_schedule)
                if self.channel_schedule is not None
                else None
            ),
            slices=self.slices,
            bottleneck_depth=self.bottleneck_depth,
            slice_loss_weight=self.slice_loss_weight,
            input_mode=self.input_mode,
        )

    def fit(self, X, y):
        config = self._config()
        poses = poses_from_rows(X, self.input_mode)
        frames = check_rgbd_frames(y, config.output_resolution)
        if len(poses) != frames.shape[0]:
            raise ValueError("X and y must hold the same number of frames")

        depth = frames[..., 3]
        d_lo, d_hi = float(depth.min()), float(depth.max())
        if d_lo == d_hi:
            d_hi = d_lo + 1e-6
        bounds = PoseBounds.from_translations(
            np.stack([p.translation for p in poses])
        )
        rgbd = np.empty(frames.shape, dtype=np.float32)
        rgbd[..., :3] = frames[..., :3] * 2.0 - 1.0
        rgbd[..., 3] = (depth - d_lo) / (d_hi - d_lo) * 2.0 - 1.0
        dataset = LoadedDataset(
            name="fit",
            resolution=config.output_resolution,
            bounds=bounds,
            depth_range=(d_lo, d_hi),
            depth_unit="meters",
            poses=poses,
            timestamps=np.arange(len(poses), dtype=np.float64),
            rgbd=rgbd,
        )
        self.model_ = build_model(config, bounds, (d_lo, d_hi), seed=self.seed)
        self.report_: TrainReport = train(
            self.model_,
            dataset,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=self.seed,
            weight_decay=self.weight_decay,
            val_split=self.val_split,
            max_steps=self.max_steps,
            verbose=self.verbose,
        )
        self.bounds_ = bounds
        self.depth_range_ = (d_lo, d_hi)
        self.n_features_in_ = X.shape[1] if hasattr(X, "shape") else len(X[0])
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        poses = poses_from_rows(X, self.input_mode)
        from pose2rgbd.poses import normalize_pose

        encoded = np.stack(
            [normalize_pose(p, self.bounds_, mode=self.input_mode) for p in poses]
        ).astype(np.float32)
        out = []
        for lo in range(0, encoded.shape[0], max(self.batch_size, 1)):
            rgbd, _ = self.model_.predict(encoded[lo : lo + max(self.batch_size, 1)])
            out.append(rgbd)
        raw = np.concatenate(out, axis=0)
        d_lo, d_hi = self.depth_range_
        frames = np.empty(raw.shape, dtype=np.float64)
        frames[..., :3] = (raw[..., :3] + 1.0) / 2.0
        frames[..., 3] = (raw[..., 3] + 1.0) / 2.0 * (d_hi - d_lo) + d_lo
        return frames

    def transform(self, X) -> np.ndarray:
        return self.predict(X)

    def score(self, X, y) -> float:
        """Negative mean absolute error in 8-bit pixel units over RGB,
        so that larger is better as scikit-learn expects."""
        check_is_fitted(self, "model_")
        frames = check_rgbd_frames(y, self.model_.config.output_resolution)
        pred = self.predict(X)
        return -float(np.abs(pred[..., :3] - frames[..., :3]).mean() * 255.0)
