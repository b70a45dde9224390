"""On-disk dataset format: a JSON manifest binding per-frame poses to an
RGB PNG and a raw float32 depth file.

Layout: ``manifest.json``, ``rgb/%06d.png``, ``depth/%06d.f32``. Depth files
carry an 8-byte header (height, width as little-endian uint32) followed by
row-major little-endian float32 values in normalized [-1, 1]; the manifest
alone holds the denormalization range. RGB is quantized to 8 bits, depth
round trips bitwise.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from pose2rgbd.poses import Pose, PoseBounds, quat_angle

MANIFEST_NAME = "manifest.json"
DEPTH_UNIT_METERS = "meters"
DEPTH_UNIT_UNSCALED = "unscaled"

# two poses closer than this are "the same viewpoint" for consistency checks
DUPLICATE_TRANSLATION_TOL = 1e-6
DUPLICATE_ANGLE_TOL = 1e-6


class DatastoreError(OSError):
    """Raised for missing or corrupt dataset files."""


@dataclass
class FrameEntry:
    index: int
    timestamp_s: float
    pose: Pose
    rgb_path: str
    depth_path: str


@dataclass
class DatasetManifest:
    name: str
    resolution: int
    bounds: PoseBounds
    depth_min: float
    depth_max: float
    depth_unit: str
    frames: list[FrameEntry]

    def __post_init__(self):
        if self.depth_min >= self.depth_max:
            raise ValueError("manifest depth range must satisfy min < max")
        if self.depth_unit not in (DEPTH_UNIT_METERS, DEPTH_UNIT_UNSCALED):
            raise ValueError(f"unknown depth unit {self.depth_unit!r}")

    @property
    def depth_range(self) -> tuple[float, float]:
        return (self.depth_min, self.depth_max)


@dataclass
class LoadedDataset:
    """A dataset pulled fully into memory, frames stacked channels-last."""

    name: str
    resolution: int
    bounds: PoseBounds
    depth_range: tuple[float, float]
    depth_unit: str
    poses: list[Pose]
    timestamps: np.ndarray
    rgbd: np.ndarray  # (N, H, W, 4) float32 in [-1, 1]

    def __len__(self) -> int:
        return len(self.poses)


# -- json (de)serialization -------------------------------------------------


def _manifest_to_json(m: DatasetManifest) -> dict:
    return {
        "name": m.name,
        "resolution": m.resolution,
        "bounds": {
            "min": [float(v) for v in m.bounds.minimum],
            "max": [float(v) for v in m.bounds.maximum],
        },
        "depth": {
            "min": float(m.depth_min),
            "max": float(m.depth_max),
            "unit": m.depth_unit,
        },
        "frames": [
            {
                "index": f.index,
                "timestamp_s": float(f.timestamp_s),
                "pose": {
                    "translation": [float(v) for v in f.pose.translation],
                    "rotation": [float(v) for v in f.pose.rotation],
                },
                "rgb": f.rgb_path,
                "depth": f.depth_path,
            }
            for f in m.frames
        ],
    }


def _manifest_from_json(doc: dict) -> DatasetManifest:
    try:
        frames = [
            FrameEntry(
                index=int(f["index"]),
                timestamp_s=float(f["timestamp_s"]),
                pose=Pose(
                    np.array(f["pose"]["translation"], dtype=np.float64),
                    np.array(f["pose"]["rotation"], dtype=np.float64),
                ),
                rgb_path=f["rgb"],
                depth_path=f["depth"],
            )
            for f in doc["frames"]
        ]
        return DatasetManifest(
            name=doc["name"],
            resolution=int(doc["resolution"]),
            bounds=PoseBounds(
                np.array(doc["bounds"]["min"], dtype=np.float64),
                np.array(doc["bounds"]["max"], dtype=np.float64),
            ),
            depth_min=float(doc["depth"]["min"]),
            depth_max=float(doc["depth"]["max"]),
            depth_unit=doc["depth"]["unit"],
            frames=frames,
        )
    except (KeyError, TypeError) as exc:
        raise DatastoreError(f"malformed manifest: {exc}") from exc


def save_manifest(manifest: DatasetManifest, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / MANIFEST_NAME
    text = json.dumps(_manifest_to_json(manifest), indent=1, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def load_manifest(directory) -> DatasetManifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise DatastoreError(f"no {MANIFEST_NAME} in {directory}")
    manifest = _manifest_from_json(json.loads(path.read_text(encoding="utf-8")))
    manifest.frames.sort(key=lambda f: f.index)
    return manifest


# -- frame files ------------------------------------------------------------


def _write_depth_file(path: Path, depth: np.ndarray) -> None:
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", h, w))
        fh.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def _read_depth_file(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 8:
        raise DatastoreError(f"depth file {path} is truncated")
    h, w = struct.unpack("<II", raw[:8])
    if len(raw) != 8 + 4 * h * w:
        raise DatastoreError(f"depth file {path} has wrong payload size")
    return np.frombuffer(raw[8:], dtype="<f4").reshape(h, w).copy()


def write_float_array(path, array: np.ndarray) -> None:
    """Store a 2-D float32 array in the frame binary format. Disparity maps
    and relative-pose tables ride on the same container as depth frames."""
    array = np.asarray(array)
    if array.ndim != 2:
        raise ValueError("binary array files hold exactly 2-D arrays")
    _write_depth_file(Path(path), array)


def read_float_array(path) -> np.ndarray:
    return _read_depth_file(Path(path))


def write_frame(
    directory, index: int, rgb01: np.ndarray, depth_norm: np.ndarray
) -> tuple[str, str]:
    """Store one frame; RGB in [0,1] (H,W,3), depth in [-1,1] (H,W).
    Returns the relative paths recorded in the manifest."""
    directory = Path(directory)
    (directory / "rgb").mkdir(parents=True, exist_ok=True)
    (directory / "depth").mkdir(parents=True, exist_ok=True)
    rgb_rel = f"rgb/{index:06d}.png"
    depth_rel = f"depth/{index:06d}.f32"
    quantized = np.clip(np.round(np.asarray(rgb01) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(directory / rgb_rel)
    _write_depth_file(directory / depth_rel, np.asarray(depth_norm))
    return rgb_rel, depth_rel


def read_frame(directory, manifest: DatasetManifest, index: int):
    """-> ((H,W,4) float32 RGBD in [-1,1], Pose). Index refers to the frame's
    manifest index, not the list position."""
    directory = Path(directory)
    entry = next((f for f in manifest.frames if f.index == index), None)
    if entry is None:
        raise DatastoreError(f"frame index {index} not in manifest")
    rgb_file = directory / entry.rgb_path
    depth_file = directory / entry.depth_path
    if not rgb_file.is_file() or not depth_file.is_file():
        raise DatastoreError(f"frame {index}: missing rgb or depth file")
    try:
        rgb = np.asarray(Image.open(rgb_file).convert("RGB"), dtype=np.float32)
    except OSError as exc:
        raise DatastoreError(f"frame {index}: corrupt rgb file: {exc}") from exc
    depth = _read_depth_file(depth_file)
    if rgb.shape[:2] != depth.shape:
        raise DatastoreError(f"frame {index}: rgb/depth resolution mismatch")
    rgbd = np.empty(depth.shape + (4,), dtype=np.float32)
    rgbd[..., :3] = rgb / 255.0 * 2.0 - 1.0
    rgbd[..., 3] = depth
    return rgbd, entry.pose


# -- whole-dataset helpers --------------------------------------------------


def write_dataset(
    directory,
    name: str,
    poses: list[Pose],
    timestamps,
    rgb01: np.ndarray,
    depth_raw: np.ndarray,
    depth_unit: str = DEPTH_UNIT_METERS,
    bounds: PoseBounds | None = None,
) -> DatasetManifest:
    """Normalize raw depth over its observed extremes and write everything.

    ``rgb01`` is (N,H,W,3) in [0,1]; ``depth_raw`` is (N,H,W) in the unit
    named by ``depth_unit``. Bounds default to the pose extremes."""
    n = len(poses)
    if n == 0:
        raise ValueError("cannot write an empty dataset")
    if rgb01.shape[0] != n or depth_raw.shape[0] != n or len(timestamps) != n:
        raise ValueError("poses, timestamps, rgb, and depth must align")
    if rgb01.shape[1] != rgb01.shape[2]:
        raise ValueError("frames must be square")
    depth_min = float(depth_raw.min())
    depth_max = float(depth_raw.max())
    if not math.isfinite(depth_min) or not math.isfinite(depth_max):
        raise ValueError("depth values must be finite")
    if depth_min == depth_max:
        depth_max = depth_min + 1e-6  # constant-depth set still normalizable
    if bounds is None:
        bounds = PoseBounds.from_translations(
            np.stack([p.translation for p in poses])
        )
    directory = Path(directory)
    frames = []
    for i, pose in enumerate(poses):
        norm = (depth_raw[i] - depth_min) / (depth_max - depth_min) * 2.0 - 1.0
        rgb_rel, depth_rel = write_frame(directory, i, rgb01[i], norm)
        frames.append(
            FrameEntry(
                index=i,
                timestamp_s=float(timestamps[i]),
                pose=pose,
                rgb_path=rgb_rel,
                depth_path=depth_rel,
            )
        )
    manifest = DatasetManifest(
        name=name,
        resolution=int(rgb01.shape[1]),
        bounds=bounds,
        depth_min=depth_min,
        depth_max=depth_max,
        depth_unit=depth_unit,
        frames=frames,
    )
    save_manifest(manifest, directory)
    return manifest


def load_dataset(directory, manifest: DatasetManifest | None = None) -> LoadedDataset:
    """Pull every frame of ``manifest`` (default: the directory's own) into
    one stacked array."""
    directory = Path(directory)
    if manifest is None:
        manifest = load_manifest(directory)
    poses, stamps, frames = [], [], []
    for entry in manifest.frames:
        rgbd, pose = read_frame(directory, manifest, entry.index)
        poses.append(pose)
        stamps.append(entry.timestamp_s)
        frames.append(rgbd)
    return LoadedDataset(
        name=manifest.name,
        resolution=manifest.resolution,
        bounds=manifest.bounds,
        depth_range=manifest.depth_range,
        depth_unit=manifest.depth_unit,
        poses=poses,
        timestamps=np.array(stamps, dtype=np.float64),
        rgbd=np.stack(frames) if frames else np.zeros((0, 0, 0, 4), np.float32),
    )


# -- validation and splitting -----------------------------------------------


@dataclass
class ValidationIssue:
    kind: str  # "duplicate-pose" | "out-of-bounds"
    frame_indices: tuple[int, ...]
    detail: str


def validate(directory, manifest: DatasetManifest | None = None) -> list[ValidationIssue]:
    """Report-only checks: near-identical poses whose frames differ (those
    frames contradict each other as training targets), and poses outside the
    manifest bounds. Poses exactly on a bound are fine."""
    directory = Path(directory)
    if manifest is None:
        manifest = load_manifest(directory)
    issues: list[ValidationIssue] = []
    entries = manifest.frames
    for entry in entries:
        t = entry.pose.translation
        if np.any(t < manifest.bounds.minimum) or np.any(t > manifest.bounds.maximum):
            issues.append(
                ValidationIssue(
                    kind="out-of-bounds",
                    frame_indices=(entry.index,),
                    detail=f"translation {t.tolist()} outside manifest bounds",
                )
            )
    content: dict[int, bytes] = {}

    def frame_bytes(index: int) -> bytes:
        if index not in content:
            rgbd, _ = read_frame(directory, manifest, index)
            content[index] = rgbd.tobytes()
        return content[index]

    for i, a in enumerate(entries):
        for b in entries[i + 1 :]:
            dt = float(np.linalg.norm(a.pose.translation - b.pose.translation))
            if dt > DUPLICATE_TRANSLATION_TOL:
                continue
            if quat_angle(a.pose.rotation, b.pose.rotation) > DUPLICATE_ANGLE_TOL:
                continue
            if frame_bytes(a.index) != frame_bytes(b.index):
                issues.append(
                    ValidationIssue(
                        kind="duplicate-pose",
                        frame_indices=(a.index, b.index),
                        detail="identical pose maps to differing frames",
                    )
                )
    return issues


def split(
    manifest: DatasetManifest, ratio: float = 0.8, seed: int = 0
) -> tuple[DatasetManifest, DatasetManifest]:
    """Shuffled disjoint train/val manifests sharing the directory; the
    train side gets ceil(ratio * n) frames."""
    n = len(manifest.frames)
    if n < 2:
        raise ValueError("need at least 2 frames to split")
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(n)
    n_train = math.ceil(ratio * n)
    train_idx = sorted(order[:n_train].tolist())
    val_idx = sorted(order[n_train:].tolist())

    def subset(idx: list[int], suffix: str) -> DatasetManifest:
        return DatasetManifest(
            name=f"{manifest.name}-{suffix}",
            resolution=manifest.resolution,
            bounds=manifest.bounds,
            depth_min=manifest.depth_min,
            depth_max=manifest.depth_max,
            depth_unit=manifest.depth_unit,
            frames=[manifest.frames[i] for i in idx],
        )

    return subset(train_idx, "train"), subset(val_idx, "val")
