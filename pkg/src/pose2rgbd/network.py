"""Pose-conditioned RGBD generator networks.

Two variants share a trunk: a dense projection of the encoded pose to a small
spatial grid, followed by resolution-doubling transposed-convolution stages.
The Base variant maps the full-resolution features straight to an RGBD head.
The Slice variant first runs a stack of 3x3 convolutions at full resolution,
predicts one sigmoid occupancy channel per depth interval, and concatenates
those slice maps back onto the features feeding the RGBD head.

Checkpoints are a self-describing binary format: magic string, canonical
config text, then named little-endian float32 arrays. Round trips are
bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from pose2rgbd import autodiff as ad
from pose2rgbd.autodiff import RunningStats, Tensor
from pose2rgbd.poses import MODE_EULER, MODE_QUAT, PoseBounds, encoded_length

CHECKPOINT_MAGIC = b"P2RGBD1\n"

# head kernels are 3x3 stride 1 so they preserve resolution
HEAD_KERNEL = 3
UP_KERNEL = 4


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ModelConfig:
    """Shape and loss hyperparameters for both generator variants.

    ``slices=0`` selects the Base variant (no occupancy head). The channel
    schedule lists the output channels of each doubling stage; ``None`` means
    halving from ``initial_channels`` with a floor of 8.
    """

    output_resolution: int = 64
    initial_size: int = 4
    initial_channels: int = 128
    channel_schedule: tuple[int, ...] | None = None
    slices: int = 10
    bottleneck_depth: int = 3
    slice_loss_weight: float = 1.0
    input_mode: str = MODE_QUAT

    def __post_init__(self):
        if not _is_pow2(self.output_resolution) or self.output_resolution < 16:
            raise ValueError("output_resolution must be a power of two >= 16")
        if not _is_pow2(self.initial_size) or self.initial_size < 1:
            raise ValueError("initial_size must be a positive power of two")
        if self.output_resolution <= self.initial_size:
            raise ValueError("output_resolution must exceed initial_size")
        if self.initial_channels < 1:
            raise ValueError("initial_channels must be positive")
        if self.slices < 0:
            raise ValueError("slices must be >= 0 (0 selects the Base variant)")
        if self.slices == 1:
            raise ValueError("a single depth slice is degenerate; use 0 or >= 2")
        if self.slices > 0 and self.bottleneck_depth < 1:
            raise ValueError("slice variant needs bottleneck_depth >= 1")
        if self.slice_loss_weight < 0:
            raise ValueError("slice_loss_weight must be >= 0")
        encoded_length(self.input_mode)  # validates the mode string
        if self.channel_schedule is not None:
            sched = tuple(int(c) for c in self.channel_schedule)
            if len(sched) != self.n_stages:
                raise ValueError(
                    f"channel_schedule needs {self.n_stages} entries, "
                    f"got {len(sched)}"
                )
            if any(c < 1 for c in sched):
                raise ValueError("channel_schedule entries must be positive")
            object.__setattr__(self, "channel_schedule", sched)

    @property
    def n_stages(self) -> int:
        return int(np.log2(self.output_resolution // self.initial_size))

    @property
    def stage_channels(self) -> tuple[int, ...]:
        if self.channel_schedule is not None:
            return self.channel_schedule
        return tuple(
            max(8, self.initial_channels >> (i + 1)) for i in range(self.n_stages)
        )

    @property
    def input_length(self) -> int:
        return encoded_length(self.input_mode)


def config_to_text(
    config: ModelConfig, bounds: PoseBounds, depth_range: tuple[float, float]
) -> str:
    """Canonical key=value text for checkpoints. Floats use repr so the
    parse is exact; keys are sorted."""
    items = {
        "output_resolution": str(config.output_resolution),
        "initial_size": str(config.initial_size),
        "initial_channels": str(config.initial_channels),
        "channel_schedule": ",".join(str(c) for c in config.stage_channels),
        "slices": str(config.slices),
        "bottleneck_depth": str(config.bottleneck_depth),
        "slice_loss_weight": repr(float(config.slice_loss_weight)),
        "input_mode": config.input_mode,
        "bounds_min": ",".join(repr(float(v)) for v in bounds.minimum),
        "bounds_max": ",".join(repr(float(v)) for v in bounds.maximum),
        "depth_min": repr(float(depth_range[0])),
        "depth_max": repr(float(depth_range[1])),
    }
    return "".join(f"{k}={v}\n" for k, v in sorted(items.items()))


def config_from_text(text: str) -> tuple[ModelConfig, PoseBounds, tuple[float, float]]:
    kv = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        kv[key] = value
    try:
        config = ModelConfig(
            output_resolution=int(kv["output_resolution"]),
            initial_size=int(kv["initial_size"]),
            initial_channels=int(kv["initial_channels"]),
            channel_schedule=tuple(int(c) for c in kv["channel_schedule"].split(",")),
            slices=int(kv["slices"]),
            bottleneck_depth=int(kv["bottleneck_depth"]),
            slice_loss_weight=float(kv["slice_loss_weight"]),
            input_mode=kv["input_mode"],
        )
        bounds = PoseBounds(
            minimum=np.array([float(v) for v in kv["bounds_min"].split(",")]),
            maximum=np.array([float(v) for v in kv["bounds_max"].split(",")]),
        )
        depth_range = (float(kv["depth_min"]), float(kv["depth_max"]))
    except KeyError as exc:
        raise ValueError(f"checkpoint config is missing key {exc}") from None
    return config, bounds, depth_range


class Pose2RGBDModel:
    """A built generator: named parameter tensors plus the dataset metadata
    (pose bounds, depth range) needed to map encodings back to world units."""

    def __init__(
        self,
        config: ModelConfig,
        bounds: PoseBounds,
        depth_range: tuple[float, float],
        params: dict[str, Tensor],
        running: dict[str, RunningStats],
    ):
        if depth_range[0] >= depth_range[1]:
            raise ValueError("depth_range must satisfy min < max")
        self.config = config
        self.bounds = bounds
        self.depth_range = (float(depth_range[0]), float(depth_range[1]))
        self.params = params
        self.running = running

    # -- parameter access ---------------------------------------------------

    def trainable_params(self) -> list[Tensor]:
        return list(self.params.values())

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    @property
    def dtype(self):
        return self.params["dense.w"].dtype

    def astype(self, dtype) -> "Pose2RGBDModel":
        """Same model with parameters and running stats cast to ``dtype``."""
        params = {
            k: Tensor(p.data.astype(dtype), requires_grad=True, name=k)
            for k, p in self.params.items()
        }
        running = {
            k: RunningStats(
                mean=r.mean.astype(dtype), var=r.var.astype(dtype),
                momentum=r.momentum,
            )
            for k, r in self.running.items()
        }
        return Pose2RGBDModel(
            self.config, self.bounds, self.depth_range, params, running
        )

    # -- forward ------------------------------------------------------------

    def forward(self, encoded: np.ndarray, training: bool = False):
        """Encoded poses (B, L) -> (rgbd (B,4,H,W), slices (B,S,H,W) or None),
        both as graph tensors. Channels-first layout internally."""
        x = np.asarray(encoded, dtype=self.dtype)
        if x.ndim == 1:
            x = x[None, :]
        want = self.config.input_length
        if x.ndim != 2 or x.shape[1] != want:
            raise ValueError(
                f"encoded pose batch must be (B, {want}) for mode "
                f"{self.config.input_mode!r}, got {x.shape}"
            )
        p = self.params
        cfg = self.config

        h = ad.dense(Tensor(x), p["dense.w"], p["dense.b"])
        h = ad.reshape(h, (x.shape[0], cfg.initial_channels,
                           cfg.initial_size, cfg.initial_size))
        h = ad.relu(ad.batch_norm(
            h, p["proj.bn.gamma"], p["proj.bn.beta"],
            self.running["proj.bn"], training,
        ))
        for i in range(cfg.n_stages):
            h = ad.conv_transpose2d(h, p[f"up{i}.k"], stride=2, pad=1)
            h = ad.relu(ad.batch_norm(
                h, p[f"up{i}.bn.gamma"], p[f"up{i}.bn.beta"],
                self.running[f"up{i}.bn"], training,
            ))

        feats = h
        slices = None
        if cfg.slices > 0:
            for i in range(cfg.bottleneck_depth):
                feats = ad.conv2d(feats, p[f"bott{i}.k"], stride=1, pad=1)
                feats = ad.relu(ad.batch_norm(
                    feats, p[f"bott{i}.bn.gamma"], p[f"bott{i}.bn.beta"],
                    self.running[f"bott{i}.bn"], training,
                ))
            slice_logits = ad.conv2d(feats, p["slice_head.k"], stride=1, pad=1)
            slices = ad.sigmoid(ad.channel_bias(slice_logits, p["slice_head.b"]))
            feats = ad.concat([feats, slices], axis=1)

        rgbd = ad.conv_transpose2d(feats, p["rgbd_head.k"], stride=1, pad=1)
        rgbd = ad.tanh(ad.channel_bias(rgbd, p["rgbd_head.b"]))
        return rgbd, slices

    def predict(self, encoded: np.ndarray):
        """Inference: channels-last numpy output ((B,H,W,4), (B,H,W,S) or
        None). Running statistics are used for normalization and untouched."""
        rgbd, slices = self.forward(encoded, training=False)
        out_rgbd = np.transpose(rgbd.data, (0, 2, 3, 1))
        out_slices = (
            np.transpose(slices.data, (0, 2, 3, 1)) if slices is not None else None
        )
        return out_rgbd, out_slices


def build_model(
    config: ModelConfig,
    bounds: PoseBounds,
    depth_range: tuple[float, float],
    seed: int = 0,
    dtype=np.float32,
) -> Pose2RGBDModel:
    """Initialize parameters: zero-mean normals (sigma 0.02) for weights,
    identity batch-norm, zero biases. Deterministic for a given seed and
    independent of dtype (draws happen in float64, then cast)."""
    rng = np.random.default_rng(seed)
    cfg = config
    params: dict[str, Tensor] = {}
    running: dict[str, RunningStats] = {}

    def weight(name: str, shape: tuple[int, ...]):
        data = rng.normal(0.0, 0.02, size=shape).astype(dtype)
        params[name] = Tensor(data, requires_grad=True, name=name)

    def bias(name: str, n: int):
        params[name] = Tensor(np.zeros(n, dtype=dtype), requires_grad=True, name=name)

    def bn(name: str, n: int):
        params[f"{name}.gamma"] = Tensor(
            np.ones(n, dtype=dtype), requires_grad=True, name=f"{name}.gamma"
        )
        params[f"{name}.beta"] = Tensor(
            np.zeros(n, dtype=dtype), requires_grad=True, name=f"{name}.beta"
        )
        running[name] = RunningStats.create(n, dtype=dtype)

    flat = cfg.initial_size * cfg.initial_size * cfg.initial_channels
    weight("dense.w", (cfg.input_length, flat))
    bias("dense.b", flat)
    bn("proj.bn", cfg.initial_channels)

    c_in = cfg.initial_channels
    for i, c_out in enumerate(cfg.stage_channels):
        weight(f"up{i}.k", (c_in, c_out, UP_KERNEL, UP_KERNEL))
        bn(f"up{i}.bn", c_out)
        c_in = c_out

    feat = c_in
    if cfg.slices > 0:
        for i in range(cfg.bottleneck_depth):
            weight(f"bott{i}.k", (feat, feat, HEAD_KERNEL, HEAD_KERNEL))
            bn(f"bott{i}.bn", feat)
        weight("slice_head.k", (cfg.slices, feat, HEAD_KERNEL, HEAD_KERNEL))
        bias("slice_head.b", cfg.slices)
        feat = feat + cfg.slices

    weight("rgbd_head.k", (feat, 4, HEAD_KERNEL, HEAD_KERNEL))
    bias("rgbd_head.b", 4)

    return Pose2RGBDModel(cfg, bounds, depth_range, params, running)


# -- serialization ----------------------------------------------------------


def _checkpoint_arrays(model: Pose2RGBDModel) -> dict[str, np.ndarray]:
    arrays = {name: p.data for name, p in model.params.items()}
    for name, rs in model.running.items():
        arrays[f"{name}.running_mean"] = rs.mean
        arrays[f"{name}.running_var"] = rs.var
    return arrays


def save_model(model: Pose2RGBDModel, path) -> None:
    """Write the checkpoint: magic, canonical config text, then each array as
    name, shape, and little-endian float32 payload."""
    arrays = _checkpoint_arrays(model)
    config_text = config_to_text(model.config, model.bounds, model.depth_range)
    blob = config_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(struct.pack("<I", data.size))
            fh.write(data.tobytes())


def read_checkpoint_arrays(path) -> tuple[str, dict[str, np.ndarray]]:
    """Parse a checkpoint into (config text, name -> float32 array)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a model checkpoint (bad magic)")

        def take(n: int) -> bytes:
            buf = fh.read(n)
            if len(buf) != n:
                raise ValueError("truncated checkpoint")
            return buf

        (config_len,) = struct.unpack("<I", take(4))
        config_text = take(config_len).decode("utf-8")
        (count,) = struct.unpack("<I", take(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", take(2))
            name = take(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", take(1))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            (size,) = struct.unpack("<I", take(4))
            if int(np.prod(shape, dtype=np.int64)) != size:
                raise ValueError(f"checkpoint array {name!r} has inconsistent size")
            data = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape)
            arrays[name] = data.copy()
    return config_text, arrays


def load_model(path) -> Pose2RGBDModel:
    """Rebuild a model from a checkpoint; array names and shapes must match
    what the stored config implies."""
    config_text, arrays = read_checkpoint_arrays(path)
    config, bounds, depth_range = config_from_text(config_text)
    model = build_model(config, bounds, depth_range, seed=0, dtype=np.float32)
    expected = _checkpoint_arrays(model)
    if set(expected) != set(arrays):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise ValueError(
            f"checkpoint does not match config: missing {missing}, extra {extra}"
        )
    for name, arr in arrays.items():
        if expected[name].shape != arr.shape:
            raise ValueError(
                f"checkpoint array {name!r} has shape {arr.shape}, "
                f"config implies {expected[name].shape}"
            )
    for name, p in model.params.items():
        p.data = arrays[name].astype(np.float32)
    for name, rs in model.running.items():
        rs.mean = arrays[f"{name}.running_mean"].astype(np.float32)
        rs.var = arrays[f"{name}.running_var"].astype(np.float32)
    return model


def base_variant(config: ModelConfig) -> ModelConfig:
    """The same configuration with the slice machinery removed."""
    return replace(config, slices=0)
