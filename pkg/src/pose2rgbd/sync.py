"""Recovering frame-to-pose pairing and depth scale from unsynchronized logs.

A camera and a GPS logger that never shared a clock still observe the same
motion: the mean optical-flow magnitude of the video rises and falls with
ground speed. Correlating the two signals recovers the time offset, after
which each frame can be paired with an interpolated pose. Depth scale comes
from comparing unscaled visual-odometry translations with GPS translations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pose2rgbd.datastore import DatasetManifest, FrameEntry, read_frame
from pose2rgbd.poses import Pose, PoseBounds, RelativePose

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])
MIN_CORRELATION = 0.2
SCALE_TOL_UNSCALED = 1e-6
SCALE_TOL_SCALED = 0.01
MIN_DISPARITY = 1e-6


class LowConfidenceError(ValueError):
    """The correlation peak is too weak to trust the recovered offset."""


class DegenerateMotionError(ValueError):
    """No frame moved enough to estimate a scale from."""


@dataclass
class SignalSeries:
    timestamps: np.ndarray  # seconds, strictly increasing
    values: np.ndarray
    frequency: float  # nominal Hz

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.timestamps.ndim != 1 or self.timestamps.shape != self.values.shape:
            raise ValueError("timestamps and values must be equal-length 1-D")
        if self.timestamps.size < 2:
            raise ValueError("a signal needs at least 2 samples")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.frequency <= 0:
            raise ValueError("frequency must be positive")

    def __len__(self) -> int:
        return self.timestamps.size


@dataclass
class SyncResult:
    offset: int  # pose-grid index = frame index + offset
    start: int  # first paired frame index
    end: int  # last paired frame index, inclusive
    correlation: float
    pairs: list = field(default_factory=list)

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError("intersection must be non-empty")


def interpolate_signal(s: SignalSeries, target_freq: float) -> SignalSeries:
    """Resample onto a uniform grid at ``target_freq`` spanning the signal's
    own time range; linear between samples, never beyond the endpoints."""
    if target_freq <= 0:
        raise ValueError("target frequency must be positive")
    t0, t1 = float(s.timestamps[0]), float(s.timestamps[-1])
    n = int(np.floor((t1 - t0) * target_freq)) + 1
    if n < 2:
        raise ValueError("target grid has fewer than 2 samples")
    grid = t0 + np.arange(n) / target_freq
    values = np.interp(grid, s.timestamps, s.values)
    return SignalSeries(grid, values, target_freq)


def to_grayscale(frame: np.ndarray) -> np.ndarray:
    """(H,W) passthrough or (H,W,3) luma reduction, as float64."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr @ GRAY_WEIGHTS
    raise ValueError("expected a (H,W) or (H,W,3) frame")


def compute_flow(
    a: np.ndarray, b: np.ndarray, block: int = 8, search: int = 4
) -> np.ndarray:
    """Block-matching optical flow -> (H,W,2) integer (u,v) per pixel.

    Each block of ``a`` is matched against displaced positions in ``b``
    within ``search`` pixels; the winner minimizes the sum of absolute
    differences, ties going to the smaller displacement magnitude and then
    to scan order. Displacements that would read outside ``b`` are skipped,
    so border blocks can only report what fits."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("flow inputs must be grayscale (H,W)")
    if a.shape != b.shape:
        raise ValueError(f"resolution mismatch {a.shape} vs {b.shape}")
    if block < 1 or search < 0:
        raise ValueError("block must be >= 1 and search >= 0")
    h, w = a.shape
    nby, nbx = h // block, w // block
    if nby == 0 or nbx == 0:
        raise ValueError("frame smaller than one block")
    ch, cw = nby * block, nbx * block  # analyzed region, whole blocks only

    best_sad = np.full((nby, nbx), np.inf)
    best_mag = np.full((nby, nbx), np.inf)
    best_u = np.zeros((nby, nbx), dtype=np.int64)
    best_v = np.zeros((nby, nbx), dtype=np.int64)
    block_y = np.arange(nby) * block
    block_x = np.arange(nbx) * block

    for v in range(-search, search + 1):
        for u in range(-search, search + 1):
            ys = slice(max(0, -v), min(ch, h - v))
            xs = slice(max(0, -u), min(cw, w - u))
            if ys.start >= ys.stop or xs.start >= xs.stop:
                continue
            diff = np.full((ch, cw), np.inf)
            diff[ys, xs] = np.abs(
                a[ys, xs] - b[ys.start + v : ys.stop + v, xs.start + u : xs.stop + u]
            )
            sad = diff.reshape(nby, block, nbx, block).sum(axis=(1, 3))
            # blocks touching the out-of-range margin carry inf and lose
            mag = u * u + v * v
            better = (sad < best_sad) | ((sad == best_sad) & (mag < best_mag))
            best_sad = np.where(better, sad, best_sad)
            best_mag = np.where(better, mag, best_mag)
            best_u = np.where(better, u, best_u)
            best_v = np.where(better, v, best_v)

    flow = np.zeros((h, w, 2), dtype=np.float64)
    u_px = np.repeat(np.repeat(best_u, block, axis=0), block, axis=1)
    v_px = np.repeat(np.repeat(best_v, block, axis=0), block, axis=1)
    flow[:ch, :cw, 0] = u_px
    flow[:ch, :cw, 1] = v_px
    # pixels outside the whole-block grid inherit the nearest block row/col
    if ch < h:
        flow[ch:, :cw] = flow[ch - 1 : ch, :cw]
    if cw < w:
        flow[:, cw:] = flow[:, cw - 1 : cw]
    return flow


def flow_magnitude(flow: np.ndarray) -> float:
    """Mean per-pixel displacement magnitude of a (H,W,2) field."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError("expected a (H,W,2) flow field")
    return float(np.sqrt(flow[..., 0] ** 2 + flow[..., 1] ** 2).mean())


def median_filter(values: np.ndarray, window: int = 5) -> np.ndarray:
    """Sliding median with edge replication, same length out."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and positive")
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values.copy()
    half = window // 2
    padded = np.pad(values, half, mode="edge")
    stacked = np.lib.stride_tricks.sliding_window_view(padded, window)
    return np.median(stacked, axis=-1)


def _z_normalize(values: np.ndarray) -> np.ndarray:
    std = float(values.std())
    if std == 0.0:
        raise LowConfidenceError("signal has zero variance after filtering")
    return (values - values.mean()) / std


def match_signals(
    flow_mag: SignalSeries,
    speed: SignalSeries,
    max_offset: int,
    frame_range: tuple[int, int] | None = None,
) -> SyncResult:
    """Find the integer offset aligning flow magnitude with speed.

    Both signals are median-filtered (window 5) and z-normalized; the offset
    is the argmax of the normalized cross-correlation over
    [-max_offset, +max_offset], where pose-grid index = frame index + offset.
    ``frame_range`` restricts the correlated frame indices, mimicking manual
    alignment on a distinctive stretch of motion. A peak below 0.2 raises:
    the signals are then likely unrelated."""
    if max_offset < 0:
        raise ValueError("max_offset must be >= 0")
    if abs(flow_mag.frequency - speed.frequency) > 1e-9:
        raise ValueError("signals must share one frequency grid")
    a = _z_normalize(median_filter(flow_mag.values))
    b = _z_normalize(median_filter(speed.values))
    lo, hi = 0, a.size - 1
    if frame_range is not None:
        lo, hi = int(frame_range[0]), int(frame_range[1])
        if not 0 <= lo <= hi < a.size:
            raise ValueError("frame_range outside the flow signal")

    best_offset = None
    best_corr = -np.inf
    for o in range(-max_offset, max_offset + 1):
        i0 = max(lo, -o)
        i1 = min(hi, b.size - 1 - o)
        if i1 - i0 + 1 < 3:
            continue  # overlap too small to correlate
        seg_a = a[i0 : i1 + 1]
        seg_b = b[i0 + o : i1 + o + 1]
        sa, sb = seg_a.std(), seg_b.std()
        if sa == 0.0 or sb == 0.0:
            continue
        corr = float(((seg_a - seg_a.mean()) * (seg_b - seg_b.mean())).mean() / (sa * sb))
        if corr > best_corr:
            best_corr = corr
            best_offset = o
    if best_offset is None:
        raise LowConfidenceError("no offset leaves enough overlap to correlate")
    if best_corr < MIN_CORRELATION:
        raise LowConfidenceError(
            f"correlation peak {best_corr:.3f} below {MIN_CORRELATION}"
        )
    start = max(0, -best_offset)
    end = min(flow_mag.values.size - 1, speed.values.size - 1 - best_offset)
    result = SyncResult(
        offset=best_offset, start=start, end=end, correlation=best_corr
    )
    result.pairs = [(i, i + best_offset) for i in range(start, end + 1)]
    return result


def find_scale(
    unscaled: list[RelativePose], scaled: list[RelativePose]
) -> tuple[np.ndarray, float]:
    """-> (per-frame scales, global scale).

    Per-frame scale is the ratio of translation norms. Frames that barely
    moved on either side are unreliable and inherit the running median of
    the reliable scales seen so far (frames before the first reliable one
    get backfilled from it). The global scale is the median over all
    per-frame scales."""
    if len(unscaled) != len(scaled):
        raise ValueError("relative-pose lists must have equal length")
    if not unscaled:
        raise ValueError("relative-pose lists must be non-empty")
    raw = np.full(len(unscaled), np.nan)
    valid: list[float] = []
    for i, (u, s) in enumerate(zip(unscaled, scaled)):
        nu = float(np.linalg.norm(u.translation))
        ns = float(np.linalg.norm(s.translation))
        if nu > SCALE_TOL_UNSCALED and ns > SCALE_TOL_SCALED:
            raw[i] = ns / nu
            valid.append(raw[i])
    if not valid:
        raise DegenerateMotionError(
            "no frame pair moved enough to estimate a scale"
        )
    scales = np.empty_like(raw)
    running: list[float] = []
    for i in range(len(raw)):
        if np.isnan(raw[i]):
            scales[i] = float(np.median(running)) if running else np.nan
        else:
            running.append(float(raw[i]))
            scales[i] = raw[i]
    # frames before the first reliable estimate inherit the earliest median
    first_valid = int(np.flatnonzero(~np.isnan(raw))[0])
    scales[: first_valid] = raw[first_valid]
    return scales, float(np.median(scales))


def apply_scaling(disparity: np.ndarray, scale: float) -> np.ndarray:
    """Metric depth from a disparity map: depth = scale / disparity, with
    disparity floored at 1e-6 to keep depth finite."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    disparity = np.asarray(disparity, dtype=np.float64)
    return scale / np.clip(disparity, MIN_DISPARITY, None)


# -- GPS logs and end-to-end pairing ----------------------------------------


def parse_gps_log(text: str) -> list[tuple[float, Pose]]:
    """Lines of ``timestamp_s,x,y,z[,qw,qx,qy,qz]``; missing rotations mean
    identity. Blank lines and ``#`` comments are skipped."""
    samples: list[tuple[float, Pose]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) not in (4, 8):
            raise ValueError(
                f"line {lineno}: expected 4 or 8 comma-separated fields"
            )
        try:
            nums = [float(p) for p in parts]
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        rot = np.array(nums[4:8]) if len(nums) == 8 else np.array([1.0, 0, 0, 0])
        samples.append((nums[0], Pose(np.array(nums[1:4]), rot)))
    if len(samples) < 2:
        raise ValueError("a GPS log needs at least 2 samples")
    if any(b[0] <= a[0] for a, b in zip(samples, samples[1:])):
        raise ValueError("GPS timestamps must be strictly increasing")
    return samples


def gps_speed_series(
    gps: list[tuple[float, Pose]], target_freq: float
) -> tuple[SignalSeries, list[Pose], np.ndarray]:
    """Interpolate GPS positions to the camera frequency and differentiate.

    -> (speed series, per-grid-sample poses, grid timestamps). Speeds are
    first differences times the frequency, assigned to the left sample, so
    the series is one shorter than the grid. Positions interpolate
    linearly; rotations take the nearest GPS sample's."""
    times = np.array([t for t, _ in gps])
    positions = np.stack([p.translation for _, p in gps])
    base = SignalSeries(times, positions[:, 0], target_freq)
    grid = interpolate_signal(base, target_freq).timestamps
    interp = np.stack(
        [np.interp(grid, times, positions[:, k]) for k in range(3)], axis=1
    )
    nearest = np.clip(np.searchsorted(times, grid), 0, len(gps) - 1)
    for i, g in enumerate(grid):  # searchsorted gives the right neighbor
        if nearest[i] > 0 and abs(times[nearest[i] - 1] - g) <= abs(
            times[nearest[i]] - g
        ):
            nearest[i] -= 1
    poses = [
        Pose(interp[i], gps[int(nearest[i])][1].rotation.copy())
        for i in range(len(grid))
    ]
    steps = np.linalg.norm(np.diff(interp, axis=0), axis=1)
    speed = SignalSeries(grid[:-1], steps * target_freq, target_freq)
    return speed, poses, grid


def dataset_flow_series(
    directory, manifest: DatasetManifest, block: int = 8, search: int = 4
) -> SignalSeries:
    """Mean flow magnitude between consecutive frames, assigned to the left
    frame; the nominal frequency comes from the median frame spacing."""
    entries = manifest.frames
    if len(entries) < 3:
        raise ValueError("need at least 3 frames for a flow signal")
    times = np.array([f.timestamp_s for f in entries])
    freq = 1.0 / float(np.median(np.diff(times)))
    mags = []
    prev = None
    for entry in entries:
        rgbd, _ = read_frame(directory, manifest, entry.index)
        gray = to_grayscale((rgbd[..., :3] + 1.0) / 2.0)
        if prev is not None:
            mags.append(flow_magnitude(compute_flow(prev, gray, block, search)))
        prev = gray
    return SignalSeries(times[:-1], np.array(mags), freq)


def synchronize_dataset(
    directory,
    manifest: DatasetManifest,
    gps: list[tuple[float, Pose]],
    max_offset: int = 50,
    flow_mags: SignalSeries | None = None,
    frame_range: tuple[int, int] | None = None,
) -> tuple[SyncResult, DatasetManifest]:
    """Re-pair a video's frames with an unsynchronized pose log.

    Pipeline: interpolate GPS to the camera frequency, differentiate into a
    speed signal, correlate against the flow-magnitude signal, and keep the
    overlapping stretch. Returns the match and a new manifest whose frames
    carry the matched poses (indices and files are preserved; frames outside
    the intersection are dropped, and the bounds are recomputed from the
    matched poses)."""
    if flow_mags is None:
        flow_mags = dataset_flow_series(directory, manifest)
    freq = flow_mags.frequency
    speed, grid_poses, _ = gps_speed_series(gps, freq)
    result = match_signals(flow_mags, speed, max_offset, frame_range)

    entries = manifest.frames
    kept: list[FrameEntry] = []
    pairs: list[tuple[int, Pose]] = []
    for i in range(result.start, result.end + 1):
        if i >= len(entries):
            break
        pose = grid_poses[i + result.offset]
        entry = entries[i]
        kept.append(
            FrameEntry(
                index=entry.index,
                timestamp_s=entry.timestamp_s,
                pose=pose,
                rgb_path=entry.rgb_path,
                depth_path=entry.depth_path,
            )
        )
        pairs.append((entry.index, pose))
    if not kept:
        raise ValueError("synchronized intersection contains no frames")
    result.pairs = pairs

    bounds = PoseBounds.from_translations(
        np.stack([p.translation for _, p in pairs])
    )
    paired = DatasetManifest(
        name=f"{manifest.name}-synced",
        resolution=manifest.resolution,
        bounds=bounds,
        depth_min=manifest.depth_min,
        depth_max=manifest.depth_max,
        depth_unit=manifest.depth_unit,
        frames=kept,
    )
    return result, paired
