"""Training loop, losses, evaluation metrics, and inference benchmarking."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from pose2rgbd import autodiff as ad
from pose2rgbd.datastore import (
    DUPLICATE_ANGLE_TOL,
    DUPLICATE_TRANSLATION_TOL,
    LoadedDataset,
)
from pose2rgbd.network import Pose2RGBDModel
from pose2rgbd.optim import AdamW
from pose2rgbd.poses import normalize_pose, quat_angle
from pose2rgbd.slicing import slice_depth


class DatasetConsistencyError(ValueError):
    """The same pose maps to two different frames; such a set has no
    learnable function behind it."""


@dataclass
class TrainReport:
    seed: int
    epochs_run: int
    steps: int
    train_losses: list[float] = field(default_factory=list)  # one per epoch
    val_losses: list[float] = field(default_factory=list)  # empty if no val split
    rgb_px_error: float = float("nan")
    depth_error: float = float("nan")
    wall_time_s: float = 0.0
    best_epoch: int = -1


def total_loss(
    pred_rgbd: ad.Tensor,
    gt_rgbd: np.ndarray,
    pred_slices: ad.Tensor | None = None,
    gt_slices: np.ndarray | None = None,
    slice_weight: float = 1.0,
) -> ad.Tensor:
    """MSE on the RGBD map plus, for the Slice variant, the mean of the
    per-slice binary cross entropies scaled by ``slice_weight``."""
    if pred_rgbd.data.shape != np.shape(gt_rgbd):
        raise ValueError("prediction and target RGBD shapes differ")
    loss = ad.mse_loss(
        pred_rgbd,
        ad.Tensor(np.asarray(gt_rgbd, dtype=pred_rgbd.data.dtype)),
    )
    if pred_slices is not None:
        if gt_slices is None:
            raise ValueError("slice prediction given without slice targets")
        if pred_slices.data.shape != np.shape(gt_slices):
            raise ValueError("prediction and target slice shapes differ")
        # bce averages over every element; slices are equally sized, so this
        # is exactly the mean of the per-slice means
        bce = ad.bce_loss(
            pred_slices,
            ad.Tensor(np.asarray(gt_slices, dtype=pred_slices.data.dtype)),
        )
        loss = loss + bce * float(slice_weight)
    return loss


def _check_pose_consistency(dataset: LoadedDataset) -> None:
    """Raise if two frames share a pose (within storage tolerance) but hold
    different content."""
    n = len(dataset)
    if n < 2:
        return
    t = np.stack([p.translation for p in dataset.poses])
    d2 = ((t[None, :, :] - t[:, None, :]) ** 2).sum(axis=-1)
    ii, jj = np.nonzero(d2 <= DUPLICATE_TRANSLATION_TOL**2)
    for i, j in zip(ii.tolist(), jj.tolist()):
        if i >= j:
            continue
        ang = quat_angle(dataset.poses[i].rotation, dataset.poses[j].rotation)
        if ang > DUPLICATE_ANGLE_TOL:
            continue
        if dataset.rgbd[i].tobytes() != dataset.rgbd[j].tobytes():
            raise DatasetConsistencyError(
                f"frames {i} and {j} share a pose but differ in content"
            )


def encode_dataset(model: Pose2RGBDModel, dataset: LoadedDataset):
    """-> (encoded (N,L) float32, targets (N,4,H,W), slice targets or None)."""
    encoded = np.stack(
        [
            normalize_pose(p, model.bounds, mode=model.config.input_mode)
            for p in dataset.poses
        ]
    ).astype(np.float32)
    targets = np.ascontiguousarray(np.transpose(dataset.rgbd, (0, 3, 1, 2)))
    slice_targets = None
    s = model.config.slices
    if s > 0:
        slice_targets = np.stack(
            [
                np.transpose(slice_depth(targets[i, 3], s), (2, 0, 1))
                for i in range(len(dataset))
            ]
        )
    return encoded, targets, slice_targets


def train_step(
    model: Pose2RGBDModel,
    optimizer: AdamW,
    encoded: np.ndarray,
    target_rgbd: np.ndarray,
    target_slices: np.ndarray | None,
) -> float:
    """One optimization step over a prepared batch; returns the loss."""
    for p in model.trainable_params():
        p.grad = None
    rgbd, slices = model.forward(encoded, training=True)
    loss = total_loss(
        rgbd,
        target_rgbd,
        slices,
        target_slices if slices is not None else None,
        slice_weight=model.config.slice_loss_weight,
    )
    loss.backward()
    optimizer.step()
    return float(loss.data)


def _eval_loss(
    model: Pose2RGBDModel,
    encoded: np.ndarray,
    targets: np.ndarray,
    slice_targets: np.ndarray | None,
    batch_size: int,
) -> float:
    """Mean total loss in inference mode (no stat updates, no gradients)."""
    total = 0.0
    count = 0
    for lo in range(0, encoded.shape[0], batch_size):
        hi = min(lo + batch_size, encoded.shape[0])
        rgbd, slices = model.forward(encoded[lo:hi], training=False)
        loss = total_loss(
            rgbd,
            targets[lo:hi],
            slices,
            slice_targets[lo:hi] if slices is not None else None,
            slice_weight=model.config.slice_loss_weight,
        )
        total += float(loss.data) * (hi - lo)
        count += hi - lo
    return total / max(count, 1)


def train(
    model: Pose2RGBDModel,
    dataset: LoadedDataset,
    epochs: int = 100,
    batch_size: int = 8,
    lr: float = 0.01,
    seed: int = 0,
    weight_decay: float = 0.0,
    val_split: float = 0.2,
    max_steps: int | None = None,
    target_rgb_px: float | None = None,
    target_depth_mae: float | None = None,
    eval_every: int = 10,
    verbose: bool = False,
) -> TrainReport:
    """Fit the model to the dataset.

    Frames are shuffled once per epoch with a seeded generator, so two runs
    from the same initial weights produce identical loss trajectories. When a
    validation split is possible (val fraction rounds to at least one frame)
    the parameters from the best-validation epoch are restored at the end.
    Early stopping triggers on ``max_steps`` or, when targets are given, on
    the train-split metrics measured every ``eval_every`` epochs.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if batch_size < 2:
        raise ValueError("batch size must be >= 2 (batch statistics)")
    _check_pose_consistency(dataset)

    start = time.monotonic()
    rng = np.random.default_rng(seed)
    encoded, targets, slice_targets = encode_dataset(model, dataset)

    n = encoded.shape[0]
    order = rng.permutation(n)
    n_val = int(round(val_split * n)) if 0.0 < val_split < 1.0 else 0
    if n - n_val < 2:
        n_val = 0  # too small to carve out validation
    val_idx = np.sort(order[:n_val])
    train_idx = np.sort(order[n_val:])

    optimizer = AdamW(
        model.trainable_params(), lr=lr, weight_decay=weight_decay
    )
    report = TrainReport(seed=seed, epochs_run=0, steps=0)
    best_val = float("inf")
    best_state = None

    def snapshot():
        return (
            {k: v.data.copy() for k, v in model.params.items()},
            {k: (rs.mean.copy(), rs.var.copy()) for k, rs in model.running.items()},
        )

    def restore(state):
        params, running = state
        for k, v in model.params.items():
            v.data[...] = params[k]
        for k, rs in model.running.items():
            rs.mean[...] = running[k][0]
            rs.var[...] = running[k][1]

    stop = False
    for epoch in range(epochs):
        perm = train_idx[rng.permutation(train_idx.shape[0])]
        epoch_losses = []
        for lo in range(0, perm.shape[0], batch_size):
            batch = perm[lo : lo + batch_size]
            if batch.shape[0] < 2:
                continue  # batch statistics need at least two frames
            loss = train_step(
                model,
                optimizer,
                encoded[batch],
                targets[batch],
                slice_targets[batch] if slice_targets is not None else None,
            )
            epoch_losses.append(loss)
            report.steps += 1
            if max_steps is not None and report.steps >= max_steps:
                stop = True
                break
        report.epochs_run = epoch + 1
        report.train_losses.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))

        if n_val > 0:
            vloss = _eval_loss(
                model,
                encoded[val_idx],
                targets[val_idx],
                slice_targets[val_idx] if slice_targets is not None else None,
                batch_size,
            )
            report.val_losses.append(vloss)
            if vloss < best_val:
                best_val = vloss
                best_state = snapshot()
                report.best_epoch = epoch

        if verbose:
            vtxt = f" val {report.val_losses[-1]:.5f}" if n_val > 0 else ""
            print(
                f"epoch {epoch + 1}/{epochs} loss {report.train_losses[-1]:.5f}{vtxt}"
            )

        if not stop and (target_rgb_px is not None or target_depth_mae is not None):
            if (epoch + 1) % max(eval_every, 1) == 0:
                metrics = evaluate(model, dataset, indices=train_idx, batch_size=batch_size)
                rgb_ok = (
                    target_rgb_px is None or metrics["rgb_px_error"] < target_rgb_px
                )
                depth_ok = (
                    target_depth_mae is None
                    or metrics["depth_error"] < target_depth_mae
                )
                if rgb_ok and depth_ok:
                    stop = True
        if stop:
            break

    if best_state is not None:
        # keep the best-validation parameters, not the last ones
        final_val = report.val_losses[-1] if report.val_losses else float("inf")
        if final_val > best_val:
            restore(best_state)

    metrics = evaluate(model, dataset, indices=train_idx, batch_size=batch_size)
    report.rgb_px_error = metrics["rgb_px_error"]
    report.depth_error = metrics["depth_error"]
    report.wall_time_s = time.monotonic() - start
    return report


def evaluate(
    model: Pose2RGBDModel,
    dataset: LoadedDataset,
    indices=None,
    batch_size: int = 8,
) -> dict:
    """-> {rgb_px_error, depth_error}.

    RGB error is the mean absolute difference scaled to 8-bit pixel units
    (a normalized gap of 2 spans 255 levels). Depth error is the mean
    absolute difference after mapping each side through its own stored
    depth range, in that range's unit."""
    if dataset.resolution != model.config.output_resolution:
        raise ValueError(
            f"dataset resolution {dataset.resolution} does not match "
            f"model output {model.config.output_resolution}"
        )
    if indices is None:
        indices = np.arange(len(dataset))
    encoded, targets, _ = encode_dataset(model, dataset)
    rgb_err = 0.0
    depth_err = 0.0
    count = 0
    m_lo, m_hi = model.depth_range
    d_lo, d_hi = dataset.depth_range
    for lo in range(0, len(indices), batch_size):
        batch = indices[lo : lo + batch_size]
        rgbd, _ = model.forward(encoded[batch], training=False)
        pred = rgbd.data
        gt = targets[batch]
        rgb_err += float(np.abs(pred[:, :3] - gt[:, :3]).mean()) * batch.shape[0]
        pred_m = (pred[:, 3] + 1.0) / 2.0 * (m_hi - m_lo) + m_lo
        gt_m = (gt[:, 3] + 1.0) / 2.0 * (d_hi - d_lo) + d_lo
        depth_err += float(np.abs(pred_m - gt_m).mean()) * batch.shape[0]
        count += batch.shape[0]
    return {
        "rgb_px_error": rgb_err / count * 127.5,
        "depth_error": depth_err / count,
    }


def bench(model: Pose2RGBDModel, batch_sizes=(1, 10), runs: int = 100) -> list[dict]:
    """Inference throughput: each entry averages ``runs`` forward passes.

    fps is frames per second (batch size over mean latency); peak_memory_mb
    is the process RSS high-water mark observed across the runs."""
    import psutil

    proc = psutil.Process()
    rng = np.random.default_rng(0)
    rows = []
    for bs in batch_sizes:
        if bs < 1:
            raise ValueError("batch sizes must be >= 1")
        x = rng.uniform(-1.0, 1.0, size=(bs, model.config.input_length)).astype(
            np.float32
        )
        model.forward(x, training=False)  # warm-up outside the clock
        peak = proc.memory_info().rss
        start = time.perf_counter()
        for _ in range(runs):
            model.forward(x, training=False)
            peak = max(peak, proc.memory_info().rss)
        mean_t = (time.perf_counter() - start) / runs
        rows.append(
            {
                "batch_size": int(bs),
                "params": int(model.param_count()),
                "peak_memory_mb": peak / 2**20,
                "fps": bs / mean_t,
                "latency_ms": mean_t * 1e3,
            }
        )
    return rows
