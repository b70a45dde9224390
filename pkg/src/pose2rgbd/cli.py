"""Command-line front end for the full pipeline.

Subcommands cover every stage: generate an oracle dataset, re-pair a video
with a drifting pose log, recover metric scale for disparity maps, train,
evaluate, benchmark, render single poses, and serve renders over HTTP.
"""

from __future__ import annotations

import argparse
import math
import shutil
import sys
from pathlib import Path

import numpy as np

from pose2rgbd import datastore, raycast, sync, training
from pose2rgbd.network import ModelConfig, build_model, load_model, save_model
from pose2rgbd.poses import (
    MODE_EULER,
    MODE_QUAT,
    RelativePose,
    relative_from_absolute,
)
from pose2rgbd.server import clamp_request_pose, create_app, render_pose_images


def _parse_floats(text: str, count: int, flag: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != count:
        raise ValueError(f"{flag} expects {count} comma-separated numbers")
    try:
        return np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{flag}: {exc}") from exc


def _parse_int_pair(text: str, flag: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"{flag} expects two comma-separated integers")
    return int(parts[0]), int(parts[1])


# -- gen-scene ---------------------------------------------------------------


def _speed_profile(amount: float):
    if amount == 0.0:
        return None
    if not 0.0 < amount < 1.4:
        raise ValueError("--speed-var must be in (0, 1.4) to keep speed positive")

    def profile(u: np.ndarray) -> np.ndarray:
        wave = 0.45 * np.sin(2 * np.pi * 4.7 * u) + 0.25 * np.sin(
            2 * np.pi * 1.9 * u + 1.0
        )
        return 1.0 + amount * wave

    return profile


def cmd_gen_scene(args) -> int:
    scene = raycast.build_scene(
        seed=args.seed, n_boxes=args.boxes, world_size=args.world_size
    )
    intrinsics = raycast.CameraIntrinsics(
        fov=math.radians(args.fov_deg), resolution=args.resolution
    )
    poses, stamps = raycast.lawnmower_trajectory(
        scene,
        args.frames,
        altitude=args.altitude,
        rows=args.rows,
        wobble=args.wobble,
        seed=args.seed,
        fps=args.fps,
        speed_profile=_speed_profile(args.speed_var),
        extent=args.extent,
    )

    lo, hi = 0, args.frames
    if args.video_range is not None:
        lo, hi = _parse_int_pair(args.video_range, "--video-range")
        if not 0 <= lo < hi <= args.frames:
            raise ValueError("--video-range must select a non-empty frame window")

    rgb = np.zeros((hi - lo, args.resolution, args.resolution, 3), dtype=np.float32)
    depth = np.zeros((hi - lo, args.resolution, args.resolution), dtype=np.float32)
    for j, i in enumerate(range(lo, hi)):
        rgb[j], depth[j] = raycast.render_gt(scene, poses[i], intrinsics)

    out = Path(args.out)
    # camera clock restarts at zero on the first kept frame
    video_stamps = stamps[lo:hi] - stamps[lo]
    manifest = datastore.write_dataset(
        out,
        name=args.name,
        poses=list(poses[lo:hi]),
        timestamps=video_stamps,
        rgb01=rgb,
        depth_raw=depth,
        depth_unit=datastore.DEPTH_UNIT_METERS,
    )
    print(f"wrote {len(manifest.frames)} frames at {args.resolution}px to {out}")

    if args.gps_out:
        lines = ["# timestamp_s,x,y,z,qw,qx,qy,qz"]
        for t, pose in zip(stamps, poses):
            vals = [t, *pose.translation, *pose.rotation]
            lines.append(",".join(f"{v:.9f}" for v in vals))
        Path(args.gps_out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"wrote pose log ({len(poses)} samples) to {args.gps_out}")

    # disparity and relative-pose outputs index video frames, matching the
    # manifest the dataset write just assigned
    if args.disparity_out:
        ddir = Path(args.disparity_out)
        ddir.mkdir(parents=True, exist_ok=True)
        alpha = args.disparity_scale
        for j in range(hi - lo):
            datastore.write_float_array(ddir / f"{j:06d}.f32", alpha / depth[j])
        print(f"wrote {hi - lo} disparity maps (scale {alpha}) to {ddir}")

    if args.rel_poses_out:
        alpha = args.disparity_scale
        rows = np.zeros((hi - lo - 1, 7), dtype=np.float32)
        for j, i in enumerate(range(lo, hi - 1)):
            rel = relative_from_absolute(poses[i], poses[i + 1])
            rows[j, :3] = (poses[i + 1].translation - poses[i].translation) / alpha
            rows[j, 3:] = rel.rotation
        datastore.write_float_array(args.rel_poses_out, rows)
        print(f"wrote {len(rows)} relative poses to {args.rel_poses_out}")
    return 0


# -- sync --------------------------------------------------------------------


def _materialize(
    manifest: datastore.DatasetManifest, src: Path, dst: Path
) -> Path:
    """Write a manifest to ``dst``, copying frame files when it is a new
    directory."""
    if dst.resolve() != src.resolve():
        for entry in manifest.frames:
            for rel in (entry.rgb_path, entry.depth_path):
                target = dst / rel
                target.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(src / rel, target)
    return datastore.save_manifest(manifest, dst)


def cmd_sync(args) -> int:
    src = Path(args.dataset)
    manifest = datastore.load_manifest(src)
    gps = sync.parse_gps_log(Path(args.gps).read_text(encoding="utf-8"))
    frame_range = None
    if args.frame_range is not None:
        frame_range = _parse_int_pair(args.frame_range, "--frame-range")
    result, synced = sync.synchronize_dataset(
        src, manifest, gps, max_offset=args.max_offset, frame_range=frame_range
    )
    out = Path(args.out) if args.out else src
    path = _materialize(synced, src, out)
    dropped = len(manifest.frames) - len(synced.frames)
    print(
        f"offset {result.offset:+d} samples (correlation {result.correlation:.3f}); "
        f"kept frames {result.start}..{result.end}, dropped {dropped}"
    )
    print(f"wrote {path}")
    return 0


# -- scale-depth -------------------------------------------------------------


def cmd_scale_depth(args) -> int:
    src = Path(args.dataset)
    manifest = datastore.load_manifest(src)
    n = len(manifest.frames)
    if n < 2:
        raise ValueError("scale recovery needs at least 2 frames")
    indices = [f.index for f in manifest.frames]
    if indices != list(range(indices[0], indices[0] + n)):
        raise ValueError("dataset frames must be consecutive for scale recovery")

    rel_rows = datastore.read_float_array(args.rel_poses)
    if rel_rows.ndim != 2 or rel_rows.shape[1] != 7:
        raise ValueError("relative-pose file must hold rows of tx,ty,tz,qw,qx,qy,qz")
    if indices[-2] >= len(rel_rows):
        raise ValueError(
            f"relative-pose file has {len(rel_rows)} rows but the dataset "
            f"needs pair {indices[-2]}"
        )

    disparity = []
    for entry in manifest.frames:
        disparity.append(
            datastore.read_float_array(Path(args.disparity) / f"{entry.index:06d}.f32")
        )

    unscaled = []
    scaled = []
    for j in range(n - 1):
        row = rel_rows[indices[j]]
        unscaled.append(
            RelativePose(row[3:7].astype(np.float64), row[:3], scaled=False)
        )
        scaled.append(
            relative_from_absolute(
                manifest.frames[j].pose, manifest.frames[j + 1].pose
            )
        )
    per_frame, global_scale = sync.find_scale(unscaled, scaled)

    res = manifest.resolution
    rgb = np.zeros((n, res, res, 3), dtype=np.float32)
    depth = np.zeros((n, res, res), dtype=np.float32)
    for j, entry in enumerate(manifest.frames):
        rgbd, _ = datastore.read_frame(src, manifest, entry.index)
        rgb[j] = (rgbd[..., :3] + 1.0) / 2.0
        scale = global_scale if args.use_global else float(per_frame[min(j, n - 2)])
        depth[j] = sync.apply_scaling(disparity[j], scale)

    out = Path(args.out)
    scaled_manifest = datastore.write_dataset(
        out,
        name=f"{manifest.name}-scaled",
        poses=[f.pose for f in manifest.frames],
        timestamps=np.array([f.timestamp_s for f in manifest.frames]),
        rgb01=rgb,
        depth_raw=depth,
        depth_unit=datastore.DEPTH_UNIT_METERS,
    )
    print(
        f"global scale {global_scale:.4f} "
        f"(per-frame {per_frame.min():.4f}..{per_frame.max():.4f}); "
        f"depth range {scaled_manifest.depth_min:.3f}..{scaled_manifest.depth_max:.3f} m"
    )
    print(f"wrote {len(scaled_manifest.frames)} frames to {out}")
    return 0


# -- train / eval / bench ----------------------------------------------------


def _parse_schedule(text: str | None) -> tuple[int, ...] | None:
    if text is None:
        return None
    return tuple(int(p) for p in text.split(","))


def cmd_train(args) -> int:
    ds = datastore.load_dataset(args.dataset)
    config = ModelConfig(
        output_resolution=ds.resolution,
        initial_channels=args.initial_channels,
        channel_schedule=_parse_schedule(args.channel_schedule),
        slices=0 if args.base else args.slices,
        bottleneck_depth=args.bottleneck_depth,
        slice_loss_weight=args.slice_weight,
        input_mode=args.input_mode,
    )
    model = build_model(config, ds.bounds, ds.depth_range, seed=args.seed)
    report = training.train(
        model,
        ds,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        weight_decay=args.weight_decay,
        val_split=args.val_split,
        max_steps=args.max_steps,
        verbose=args.verbose,
    )
    save_model(model, args.out)
    print(
        f"trained {report.steps} steps ({report.epochs_run} epochs) "
        f"in {report.wall_time_s:.1f}s"
    )
    print(f"final train loss {report.train_losses[-1]:.6f}")
    if report.val_losses:
        print(
            f"best val loss {min(report.val_losses):.6f} "
            f"(epoch {report.best_epoch})"
        )
    print(
        f"train rgb_px_error={report.rgb_px_error:.2f} "
        f"depth_error={report.depth_error:.4f}"
    )
    print(f"wrote checkpoint to {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    ds = datastore.load_dataset(args.dataset)
    metrics = training.evaluate(model, ds, batch_size=args.batch_size)
    unit = "m" if ds.depth_unit == datastore.DEPTH_UNIT_METERS else "(unscaled)"
    print(f"rgb_px_error={metrics['rgb_px_error']:.4f}")
    print(f"depth_error={metrics['depth_error']:.4f} {unit}")
    return 0


def cmd_bench(args) -> int:
    model = load_model(args.model)
    sizes = tuple(int(p) for p in args.batch_sizes.split(","))
    rows = training.bench(model, batch_sizes=sizes, runs=args.runs)
    print(f"{'batch':>6} {'params':>10} {'peak MB':>9} {'fps':>9} {'ms':>8}")
    for row in rows:
        print(
            f"{row['batch_size']:>6} {row['params']:>10} "
            f"{row['peak_memory_mb']:>9.1f} {row['fps']:>9.2f} "
            f"{row['latency_ms']:>8.2f}"
        )
    return 0


# -- render / serve ----------------------------------------------------------


def cmd_render(args) -> int:
    model = load_model(args.model)
    vals = _parse_floats(args.pose, 7, "--pose")
    pose, clamped = clamp_request_pose(model, vals[:3], vals[3:])
    images = render_pose_images(model, pose)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    written = []
    for kind in ("rgb", "depth", "confidence"):
        path = Path(f"{out}_{kind}.png")
        path.write_bytes(images[f"{kind}_png"])
        written.append(str(path))
    if clamped:
        print("pose outside trained bounds; clamped")
    print(f"rendered in {images['render_ms']:.1f} ms")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    model = load_model(args.model)
    app = create_app(model)
    print(f"serving on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pose2rgbd",
        description="pose-conditioned RGBD renderer and dataset pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="render a synthetic oracle dataset")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--boxes", type=int, default=8)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--altitude", type=float, default=6.0)
    p.add_argument("--world-size", type=float, default=20.0)
    p.add_argument("--fov-deg", type=float, default=60.0)
    p.add_argument("--rows", type=int, default=4)
    p.add_argument(
        "--extent",
        type=float,
        default=None,
        help="half-width of the swept square, m (default: most of the scene)",
    )
    p.add_argument("--wobble", type=float, default=0.1, help="attitude noise, rad")
    p.add_argument("--fps", type=float, default=2.0)
    p.add_argument("--name", default="oracle")
    p.add_argument(
        "--speed-var",
        type=float,
        default=0.0,
        help="flight-speed variation amplitude (0 = constant speed)",
    )
    p.add_argument(
        "--video-range",
        default=None,
        help="A,B keeps only frames [A,B) in the dataset; the pose log still "
        "covers the whole flight",
    )
    p.add_argument("--gps-out", default=None, help="write the pose log here")
    p.add_argument(
        "--disparity-out", default=None, help="write per-frame disparity maps here"
    )
    p.add_argument(
        "--rel-poses-out", default=None, help="write unscaled relative poses here"
    )
    p.add_argument(
        "--disparity-scale",
        type=float,
        default=4.2,
        help="scale factor the disparity/relative-pose outputs are shrunk by",
    )
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("sync", help="re-pair video frames with a pose log")
    p.add_argument("--dataset", required=True)
    p.add_argument("--gps", required=True, help="pose log file")
    p.add_argument("--out", default=None, help="default: rewrite in place")
    p.add_argument("--max-offset", type=int, default=50)
    p.add_argument("--frame-range", default=None, help="A,B flow window")
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser(
        "scale-depth", help="recover metric depth from disparity maps"
    )
    p.add_argument("--dataset", required=True, help="synced dataset with metric poses")
    p.add_argument("--disparity", required=True, help="disparity map directory")
    p.add_argument("--rel-poses", required=True, help="unscaled relative-pose file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument(
        "--use-global",
        action="store_true",
        help="apply the global median scale instead of per-frame scales",
    )
    p.set_defaults(func=cmd_scale_depth)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default="model.ckpt")
    p.add_argument("--slices", type=int, default=10)
    p.add_argument("--base", action="store_true", help="no slice supervision")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--val-split", type=float, default=0.2)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--initial-channels", type=int, default=128)
    p.add_argument("--channel-schedule", default=None, help="e.g. 96,64,32,16")
    p.add_argument("--bottleneck-depth", type=int, default=3)
    p.add_argument("--slice-weight", type=float, default=1.0)
    p.add_argument(
        "--input-mode", choices=(MODE_QUAT, MODE_EULER), default=MODE_QUAT
    )
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--batch-size", type=int, default=8)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure inference speed and memory")
    p.add_argument("--model", required=True)
    p.add_argument("--batch-sizes", default="1,10")
    p.add_argument("--runs", type=int, default=100)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", help="render one pose to image files")
    p.add_argument("--model", required=True)
    p.add_argument("--pose", required=True, help="x,y,z,qw,qx,qy,qz")
    p.add_argument("--out", required=True, help="output file prefix")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("serve", help="run the HTTP render service")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
