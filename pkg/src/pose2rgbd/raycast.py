"""Deterministic software raycaster over a procedural toy world.

The scene is a textured ground plane at z=0 plus axis-aligned boxes sitting
on it. Rendering produces ground-truth RGBD for any camera pose, which makes
every downstream number in the pipeline checkable: depth here is z-depth
(distance along the optical axis), so a camera at height h looking straight
down sees depth h at every ground pixel.

Camera convention: x right, y down, z forward. A pose with the identity
quaternion looks straight down (nadir); the pose rotation is applied on top
of that base orientation. Texture is procedural (checker plus integer-hash
noise), so identical scenes rebuild bit-identically from a seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from pose2rgbd.datastore import DatasetManifest, write_dataset
from pose2rgbd.poses import EulerAngles, Pose, euler_to_quat, quat_to_matrix

# camera axes -> world axes for the nadir base orientation
NADIR = np.diag([1.0, -1.0, -1.0])

_BOX_PALETTE = np.array(
    [
        [0.85, 0.30, 0.25],
        [0.25, 0.55, 0.85],
        [0.95, 0.75, 0.20],
        [0.35, 0.75, 0.40],
        [0.75, 0.35, 0.75],
        [0.90, 0.55, 0.30],
        [0.30, 0.75, 0.75],
        [0.80, 0.80, 0.80],
    ]
)


@dataclass(frozen=True)
class CameraIntrinsics:
    fov: float = 1.0471975511965976  # 60 degrees vertical
    resolution: int = 64

    def __post_init__(self):
        if not 0.0 < self.fov < math.pi:
            raise ValueError("field of view must lie in (0, pi)")
        if self.resolution < 2:
            raise ValueError("resolution must be at least 2")


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    color: tuple[float, float, float]
    texture_seed: int

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.size) / 2.0

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.size) / 2.0


@dataclass(frozen=True)
class SceneDescription:
    seed: int
    world_size: float
    boxes: tuple[Box, ...] = field(default_factory=tuple)

    @property
    def max_height(self) -> float:
        return max((b.hi[2] for b in self.boxes), default=0.0)

    @property
    def far_plane(self) -> float:
        diag = math.sqrt(2 * self.world_size**2 + max(self.max_height, 1.0) ** 2)
        return 4.0 * diag


def build_scene(seed: int, n_boxes: int, world_size: float = 20.0) -> SceneDescription:
    """Boxes are placed on the ground inside the world square, colors cycle
    through a fixed palette; everything derives from the seed."""
    if n_boxes < 0:
        raise ValueError("n_boxes must be >= 0")
    if world_size <= 0:
        raise ValueError("world_size must be positive")
    rng = np.random.default_rng(seed)
    boxes = []
    for i in range(n_boxes):
        sx, sy = rng.uniform(1.2, 3.2, size=2)
        height = rng.uniform(1.0, 4.0)
        reach = world_size / 2.0 - max(sx, sy) / 2.0 - 0.5
        reach = max(reach, 0.0)
        cx, cy = rng.uniform(-reach, reach, size=2)
        color = _BOX_PALETTE[i % len(_BOX_PALETTE)]
        jig = rng.uniform(0.85, 1.0)
        boxes.append(
            Box(
                center=(float(cx), float(cy), float(height / 2.0)),
                size=(float(sx), float(sy), float(height)),
                color=tuple(float(c * jig) for c in color),
                texture_seed=int(rng.integers(0, 2**31)),
            )
        )
    return SceneDescription(seed=seed, world_size=world_size, boxes=tuple(boxes))


# -- procedural texture -----------------------------------------------------


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Integer-lattice hash to uniform [0,1); wrapping uint64 mixing keeps it
    identical on every platform."""
    with np.errstate(over="ignore"):  # wraparound is the point
        x = ix.astype(np.int64).astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        y = iy.astype(np.int64).astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
        h = x ^ y ^ np.uint64((seed & 0xFFFFFFFF) * 0xD6E8FEB86659FD93 & (2**64 - 1))
        h ^= h >> np.uint64(33)
        h *= np.uint64(0xFF51AFD7ED558CCD)
        h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _ground_color(px: np.ndarray, py: np.ndarray, seed: int) -> np.ndarray:
    """(N,) coords -> (N,3) colors: 1 m checker with 0.5 m noise cells.

    The noise amplitude is deliberately small relative to the checker: the
    cells give block matching something to lock onto, while the bulk of the
    signal stays at spatial frequencies a pose-conditioned generator can
    actually fit in a short training budget."""
    cx = np.floor(px).astype(np.int64)
    cy = np.floor(py).astype(np.int64)
    checker = ((cx + cy) & 1).astype(np.float64)
    fx = np.floor(px * 2.0).astype(np.int64)
    fy = np.floor(py * 2.0).astype(np.int64)
    base = 0.30 + 0.25 * checker
    out = np.empty(px.shape + (3,), dtype=np.float64)
    for c in range(3):
        out[..., c] = base + 0.10 * _hash01(fx, fy, seed * 3 + c)
    return out


def _box_face_color(box: Box, points: np.ndarray) -> np.ndarray:
    """Surface color at hit points on the box: base color modulated per
    0.5 m texture cell, with a distinct hash stream per face axis."""
    center = np.asarray(box.center)
    size = np.asarray(box.size)
    rel = (points - center) / (size / 2.0)
    face_axis = np.argmax(np.abs(rel), axis=-1)
    out = np.empty(points.shape[:-1] + (3,), dtype=np.float64)
    base = np.asarray(box.color)
    for axis in range(3):
        mask = face_axis == axis
        if not np.any(mask):
            continue
        u_axis, v_axis = [a for a in range(3) if a != axis]
        u = np.floor(points[mask, u_axis] * 2.0).astype(np.int64)
        v = np.floor(points[mask, v_axis] * 2.0).astype(np.int64)
        factor = 0.8 + 0.2 * _hash01(u, v, box.texture_seed + axis)
        out[mask] = base[None, :] * factor[:, None]
    return out


# -- rendering --------------------------------------------------------------


def camera_rays(pose: Pose, intrinsics: CameraIntrinsics) -> np.ndarray:
    """World-space ray directions (H*W, 3), scaled so the camera-forward
    component is 1; the ray parameter is then z-depth directly."""
    n = intrinsics.resolution
    half = math.tan(intrinsics.fov / 2.0)
    coords = (np.arange(n) + 0.5 - n / 2.0) / (n / 2.0) * half
    xs, ys = np.meshgrid(coords, coords, indexing="xy")
    dirs_cam = np.stack([xs, ys, np.ones_like(xs)], axis=-1).reshape(-1, 3)
    r_cw = quat_to_matrix(pose.rotation) @ NADIR
    return dirs_cam @ r_cw.T


def render_gt(
    scene: SceneDescription, pose: Pose, intrinsics: CameraIntrinsics
):
    """-> (rgb (H,W,3) float32 in [0,1], depth (H,W) float32 meters).

    Depth is z-depth; rays that miss all geometry get the far plane and a
    black pixel."""
    n = intrinsics.resolution
    origin = pose.translation.astype(np.float64)
    dirs = camera_rays(pose, intrinsics)
    far = scene.far_plane
    depth = np.full(dirs.shape[0], far, dtype=np.float64)
    hit_kind = np.full(dirs.shape[0], -1, dtype=np.int64)  # -2 ground, i box

    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = -origin[2] / dz
    ground_ok = (dz != 0) & (t_ground > 1e-9) & (t_ground < depth)
    depth[ground_ok] = t_ground[ground_ok]
    hit_kind[ground_ok] = -2

    for bi, box in enumerate(scene.boxes):
        lo, hi = box.lo, box.hi
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo[None, :] - origin[None, :]) / dirs
            t2 = (hi[None, :] - origin[None, :]) / dirs
        tmin = np.minimum(t1, t2)
        tmax = np.maximum(t1, t2)
        parallel = dirs == 0
        if np.any(parallel):
            inside = (origin >= lo) & (origin <= hi)
            tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
            tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
        t_near = tmin.max(axis=1)
        t_far = tmax.min(axis=1)
        hit = (t_near <= t_far) & (t_near > 1e-9) & (t_near < depth)
        depth[hit] = t_near[hit]
        hit_kind[hit] = bi

    rgb = np.zeros((dirs.shape[0], 3), dtype=np.float64)
    gmask = hit_kind == -2
    if np.any(gmask):
        pts = origin[None, :] + depth[gmask, None] * dirs[gmask]
        rgb[gmask] = _ground_color(pts[:, 0], pts[:, 1], scene.seed)
    for bi, box in enumerate(scene.boxes):
        bmask = hit_kind == bi
        if np.any(bmask):
            pts = origin[None, :] + depth[bmask, None] * dirs[bmask]
            rgb[bmask] = _box_face_color(box, pts)

    rgb = np.clip(rgb, 0.0, 1.0).astype(np.float32).reshape(n, n, 3)
    return rgb, depth.astype(np.float32).reshape(n, n)


# -- trajectories -----------------------------------------------------------


def _serpentine_path(extent: float, rows: int) -> np.ndarray:
    """Waypoints of a lawn-mower sweep over [-extent, extent]^2; a single
    row flies the center line."""
    ys = np.linspace(-extent, extent, rows) if rows > 1 else np.array([0.0])
    pts = []
    for i, y in enumerate(ys):
        x_pair = (-extent, extent) if i % 2 == 0 else (extent, -extent)
        pts.append((x_pair[0], y))
        pts.append((x_pair[1], y))
    return np.array(pts, dtype=np.float64)


def lawnmower_trajectory(
    scene: SceneDescription,
    n_frames: int,
    altitude: float,
    rows: int = 4,
    wobble: float = 0.1,
    seed: int = 0,
    fps: float = 2.0,
    speed_profile=None,
    extent: float | None = None,
):
    """Constant-altitude sweep across the scene -> (poses, timestamps).

    Orientation stays near nadir with a random wobble on all three angles.
    ``speed_profile`` maps progress in [0,1] to a positive relative speed so
    motion can vary while the camera clock stays fixed; None means constant.
    ``extent`` is the half-width of the swept square in meters; the default
    covers most of the scene.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if altitude <= 0:
        raise ValueError("altitude must be positive")
    if extent is None:
        extent = scene.world_size * 0.35
    if extent <= 0:
        raise ValueError("extent must be positive")
    rng = np.random.default_rng(seed)
    waypoints = _serpentine_path(extent, rows)
    seg = np.diff(waypoints, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]

    u = np.linspace(0.0, 1.0, n_frames)
    if speed_profile is None:
        progress = u
    else:
        speeds = np.array([float(speed_profile(v)) for v in u])
        if np.any(speeds <= 0):
            raise ValueError("speed_profile must be positive everywhere")
        accum = np.concatenate([[0.0], np.cumsum((speeds[:-1] + speeds[1:]) / 2.0)])
        progress = accum / accum[-1] if accum[-1] > 0 else u
    arc = progress * total

    xy = np.empty((n_frames, 2))
    for k, s in enumerate(arc):
        i = min(np.searchsorted(cum, s, side="right") - 1, len(seg) - 1)
        frac = (s - cum[i]) / seg_len[i] if seg_len[i] > 0 else 0.0
        xy[k] = waypoints[i] + frac * seg[i]

    poses = []
    for k in range(n_frames):
        angles = EulerAngles(
            roll=float(rng.uniform(-wobble, wobble)),
            pitch=float(rng.uniform(-wobble, wobble)),
            yaw=float(rng.uniform(-wobble, wobble)),
        )
        poses.append(
            Pose(
                np.array([xy[k, 0], xy[k, 1], altitude]),
                euler_to_quat(angles),
            )
        )
    timestamps = np.arange(n_frames, dtype=np.float64) / fps
    return poses, timestamps


def generate_dataset(
    scene: SceneDescription,
    poses: list[Pose],
    timestamps,
    intrinsics: CameraIntrinsics,
    out_dir,
    name: str = "oracle",
) -> DatasetManifest:
    """Render every pose and write the datastore directory; the depth range
    becomes the set-wide min/max in meters."""
    rgbs, depths = [], []
    for pose in poses:
        rgb, depth = render_gt(scene, pose, intrinsics)
        rgbs.append(rgb)
        depths.append(depth)
    return write_dataset(
        out_dir,
        name=name,
        poses=list(poses),
        timestamps=np.asarray(timestamps, dtype=np.float64),
        rgb01=np.stack(rgbs),
        depth_raw=np.stack(depths),
        depth_unit="meters",
    )
