"""Acceptance suite.

Each test prints one verdict line of the form
``[acceptance] <name>: PASS/FAIL (<numbers>)`` before asserting, so a full
run leaves a scannable summary even under plain pytest output.

The overfit, trend, and end-to-end tests train real models and dominate the
suite's runtime (tens of minutes together); everything else finishes in
seconds.
"""

import hashlib
import time
from pathlib import Path

import numpy as np
import pytest

from pose2rgbd import autodiff as ad
from pose2rgbd import datastore, raycast, slicing, sync, training
from pose2rgbd.network import (
    ModelConfig,
    base_variant,
    build_model,
    load_model,
    save_model,
)
from pose2rgbd.poses import (
    EulerAngles,
    Pose,
    PoseBounds,
    RelativePose,
    compose_relative_poses,
    euler_to_quat,
    quat_to_euler,
    quat_to_matrix,
    relative_from_absolute,
)

RES = 64
SCENE_SEED = 0
SCENE_BOXES = 8
N_FRAMES = 64

# overfit experiment recipe: the fixed parts are the scene, frame count,
# resolution, slice count, optimizer, and its fixed learning rate; the free
# parts (trajectory extent, attitude noise, batch, model width) are set to
# the best configuration a wide sweep found
OVERFIT_WOBBLE = 0.02
OVERFIT_EXTENT = 3.5
OVERFIT_SCHEDULE = None
OVERFIT_BATCH = 16
OVERFIT_MAX_STEPS = 2000
RGB_THRESHOLD = 20.0
DEPTH_FRACTION = 0.05

TREND_STEPS = 300
TREND_SEEDS = 5


def verdict(name: str, ok: bool, detail: str) -> None:
    print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'} ({detail})")


def tree_digest(directory) -> str:
    h = hashlib.sha256()
    root = Path(directory)
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def pick_kink_safe_input(model, batch: int, h: float, margin_factor: float = 200.0):
    """Scan seeds for an input whose relu preactivations all sit far enough
    from zero that central differences stay on one linear piece."""
    length = model.config.input_length
    for seed in range(64):
        encoded = np.random.default_rng(seed).uniform(-1, 1, size=(batch, length))
        with ad.track_kink_margin() as km:
            model.forward(encoded, training=True)
        if km.min_abs > margin_factor * h:
            return encoded
    raise AssertionError("no kink-safe evaluation point found in 64 seeds")


# -- shared oracle dataset ---------------------------------------------------


def render_flight(
    n_frames: int,
    resolution: int,
    wobble: float,
    altitude: float = 6.0,
    extent: float | None = None,
    speed_profile=None,
    fps: float = 2.0,
):
    """Render a lawnmower flight over the standard scene into arrays."""
    scene = raycast.build_scene(seed=SCENE_SEED, n_boxes=SCENE_BOXES)
    intr = raycast.CameraIntrinsics(resolution=resolution)
    poses, stamps = raycast.lawnmower_trajectory(
        scene,
        n_frames,
        altitude=altitude,
        wobble=wobble,
        seed=SCENE_SEED,
        fps=fps,
        extent=extent,
        speed_profile=speed_profile,
    )
    rgb = np.zeros((n_frames, resolution, resolution, 3), dtype=np.float32)
    depth = np.zeros((n_frames, resolution, resolution), dtype=np.float32)
    for i, p in enumerate(poses):
        rgb[i], depth[i] = raycast.render_gt(scene, p, intr)
    return list(poses), stamps, rgb, depth


def dataset_from_arrays(name, poses, stamps, rgb, depth):
    n, res = rgb.shape[0], rgb.shape[1]
    dmin, dmax = float(depth.min()), float(depth.max())
    rgbd = np.zeros((n, res, res, 4), dtype=np.float32)
    rgbd[..., :3] = rgb * 2.0 - 1.0
    rgbd[..., 3] = (depth - dmin) / (dmax - dmin) * 2.0 - 1.0
    bounds = PoseBounds.from_translations(
        np.stack([p.translation for p in poses])
    )
    return datastore.LoadedDataset(
        name=name,
        resolution=res,
        bounds=bounds,
        depth_range=(dmin, dmax),
        depth_unit=datastore.DEPTH_UNIT_METERS,
        poses=poses,
        timestamps=stamps,
        rgbd=rgbd,
    )


@pytest.fixture(scope="module")
def overfit_dataset():
    poses, stamps, rgb, depth = render_flight(
        N_FRAMES, RES, wobble=OVERFIT_WOBBLE, extent=OVERFIT_EXTENT
    )
    return dataset_from_arrays("overfit", poses, stamps, rgb, depth)


# -- gradient suite ----------------------------------------------------------


class TestGradientSuite:
    def test_every_op_and_full_model(self):
        start = time.perf_counter()
        failures = []
        worst = 0.0

        def run(name, fn, params, h=1e-5, samples=4):
            nonlocal worst
            report = ad.grad_check(fn, params, h=h, samples_per_param=samples)
            worst = max(worst, report.max_rel_error)
            if not report.passed:
                failures.append(f"{name}: {report.max_rel_error:.2e}")

        rng = np.random.default_rng(0)

        def t(*shape, scale=1.0):
            return ad.Tensor(
                rng.uniform(-1, 1, size=shape) * scale, requires_grad=True
            )

        # arithmetic and shape ops
        a, b = t(3, 5), t(3, 5)
        run("add", lambda: ad.mse_loss(a + b, ad.Tensor(np.zeros((3, 5)))), [a, b])
        c = t(2, 6)
        run(
            "reshape",
            lambda: ad.mse_loss(
                ad.reshape(c, (2, 3, 2)), ad.Tensor(np.zeros((2, 3, 2)))
            ),
            [c],
        )
        d, e = t(2, 3, 4, 4), t(2, 2, 4, 4)
        run(
            "concat",
            lambda: ad.mse_loss(
                ad.concat([d, e], axis=1), ad.Tensor(np.zeros((2, 5, 4, 4)))
            ),
            [d, e],
        )
        f, fb = t(2, 3, 4, 4), t(3)
        run(
            "channel_bias",
            lambda: ad.mse_loss(
                ad.channel_bias(f, fb), ad.Tensor(np.zeros((2, 3, 4, 4)))
            ),
            [f, fb],
        )

        # dense / conv / conv-transpose
        x, w, wb = t(3, 4), t(4, 5), t(5)
        run(
            "dense",
            lambda: ad.mse_loss(ad.dense(x, w, wb), ad.Tensor(np.zeros((3, 5)))),
            [x, w, wb],
        )
        cx, ck = t(2, 3, 6, 6), t(4, 3, 3, 3)
        run(
            "conv2d",
            lambda: ad.mse_loss(
                ad.conv2d(cx, ck, stride=1, pad=1),
                ad.Tensor(np.zeros((2, 4, 6, 6))),
            ),
            [cx, ck],
        )
        tx, tk = t(2, 4, 4, 4), t(4, 3, 4, 4)
        run(
            "conv_transpose2d",
            lambda: ad.mse_loss(
                ad.conv_transpose2d(tx, tk, stride=2, pad=1),
                ad.Tensor(np.zeros((2, 3, 8, 8))),
            ),
            [tx, tk],
        )

        # batch norm (training mode)
        bx, gamma, beta = t(4, 3, 5, 5), t(3, scale=0.5), t(3)
        gamma.data += 1.0  # keep scale away from zero
        stats = ad.RunningStats.create(3, dtype=np.float64)
        run(
            "batch_norm",
            lambda: ad.mse_loss(
                ad.batch_norm(bx, gamma, beta, stats, training=True),
                ad.Tensor(np.zeros((4, 3, 5, 5))),
            ),
            [bx, gamma, beta],
        )

        # activations; inputs pushed away from relu's kink
        for kind in ("relu", "tanh", "sigmoid"):
            ax = t(3, 7)
            ax.data += 0.1 * np.sign(ax.data)
            run(
                f"activation[{kind}]",
                lambda ax=ax, kind=kind: ad.mse_loss(
                    ad.activation(ax, kind), ad.Tensor(np.zeros((3, 7)))
                ),
                [ax],
            )

        # losses as the differentiated node
        mp = t(2, 4, 4, 4)
        mt = ad.Tensor(rng.uniform(-0.8, 0.8, size=(2, 4, 4, 4)))
        run("mse_loss", lambda: ad.mse_loss(mp, mt), [mp])
        bp = t(2, 3, 4, 4, scale=0.4)
        bt = ad.Tensor((rng.uniform(size=(2, 3, 4, 4)) > 0.5).astype(float))
        run("bce_loss", lambda: ad.bce_loss(ad.sigmoid(bp), bt), [bp])

        # the full slice model at 16x16 output, default width; the wide model
        # has ~74k relu preactivations, so the usable kink margin is smaller
        # than for the tiny per-op fixtures and h shrinks with it
        cfg = ModelConfig(output_resolution=16, slices=10)
        bounds = PoseBounds(np.array([-8.0, -8.0, 1.0]), np.array([8.0, 8.0, 9.0]))
        model = build_model(cfg, bounds, (2.0, 12.0), seed=0, dtype=np.float64)
        h = 5e-7
        encoded = pick_kink_safe_input(model, batch=2, h=h, margin_factor=50.0)
        grng = np.random.default_rng(3)
        gt_rgbd = ad.Tensor(grng.uniform(-0.9, 0.9, size=(2, 4, 16, 16)))
        gt_slices = ad.Tensor(
            (grng.uniform(size=(2, 10, 16, 16)) > 0.5).astype(np.float64)
        )

        def model_loss():
            rgbd, slices = model.forward(encoded, training=True)
            return ad.mse_loss(rgbd, gt_rgbd) + ad.bce_loss(slices, gt_slices)

        run("full model", model_loss, model.trainable_params(), h=h, samples=2)

        elapsed = time.perf_counter() - start
        ok = not failures and elapsed < 120.0
        verdict(
            "gradient suite",
            ok,
            f"max rel error {worst:.2e} < 1e-4, {elapsed:.0f}s < 120s",
        )
        assert not failures, f"gradient failures: {failures}"
        assert elapsed < 120.0, f"took {elapsed:.0f}s"


# -- slice partition ---------------------------------------------------------


class TestSlicePartition:
    def test_partition_and_boundaries(self):
        rng = np.random.default_rng(7)
        ok = True
        for s in (4, 10, 32, 64):
            maps = rng.uniform(-1.0, 1.0, size=(1000, 16, 16))
            stack = np.stack([slicing.slice_depth(m, s) for m in maps])
            counts = stack.sum(axis=-1)
            if not np.all(counts == 1.0):
                ok = False
        boundary = slicing.slice_depth(np.array([[-1.0, -0.8, 1.0]]), 10)
        chans = [int(np.argmax(boundary[0, i])) for i in range(3)]
        boundaries_ok = chans == [0, 1, 9]
        verdict(
            "slice partition",
            ok and boundaries_ok,
            f"4000 maps one-hot, boundaries -1,-0.8,+1 -> channels {chans}",
        )
        assert ok
        assert boundaries_ok


# -- overfit experiment ------------------------------------------------------


def overfit_config() -> ModelConfig:
    return ModelConfig(
        output_resolution=RES,
        initial_channels=128,
        channel_schedule=OVERFIT_SCHEDULE,
        slices=10,
    )


def run_overfit(dataset, seed: int = 0):
    model = build_model(
        overfit_config(), dataset.bounds, dataset.depth_range, seed=seed
    )
    report = training.train(
        model,
        dataset,
        epochs=10**6,
        batch_size=OVERFIT_BATCH,
        lr=0.01,
        seed=seed,
        val_split=0.0,
        max_steps=OVERFIT_MAX_STEPS,
    )
    return model, report


class TestOverfitExperiment:
    def test_memorizes_the_flight(self, overfit_dataset):
        start = time.perf_counter()
        _, report = run_overfit(overfit_dataset)
        elapsed = time.perf_counter() - start
        lo, hi = overfit_dataset.depth_range
        depth_limit = DEPTH_FRACTION * (hi - lo)
        ok = (
            report.rgb_px_error < RGB_THRESHOLD
            and report.depth_error < depth_limit
            and elapsed < 900.0
        )
        verdict(
            "overfit experiment",
            ok,
            f"rgb {report.rgb_px_error:.2f}px < {RGB_THRESHOLD}, "
            f"depth {report.depth_error:.3f}m < {depth_limit:.3f}m, "
            f"{report.steps} steps in {elapsed:.0f}s < 900s",
        )
        assert report.rgb_px_error < RGB_THRESHOLD, (
            f"rgb {report.rgb_px_error:.2f}px: memorizing this frame count at "
            "the fixed learning rate and step budget plateaus near 27px for "
            "every trajectory, batch, and width tried; a 16-frame control "
            "reaches 8.3px (see README, known limits)"
        )
        assert report.depth_error < depth_limit
        assert elapsed < 900.0


# -- slice vs base trend (report-only) ---------------------------------------


class TestSliceVsBaseTrend:
    def test_validation_depth_direction(self, overfit_dataset):
        """Soft check: printed for the record, never failed. Short-budget
        training keeps the suite runnable; the direction is what matters."""
        ds = overfit_dataset
        n = len(ds)
        rows = []
        wins = 0
        for seed in range(TREND_SEEDS):
            rng = np.random.default_rng(seed)
            order = rng.permutation(n)
            n_val = int(round(0.2 * n))
            val_idx = np.sort(order[:n_val])
            maes = {}
            for label, cfg in (
                ("slice", overfit_config()),
                ("base", base_variant(overfit_config())),
            ):
                model = build_model(cfg, ds.bounds, ds.depth_range, seed=seed)
                training.train(
                    model,
                    ds,
                    epochs=10**6,
                    batch_size=OVERFIT_BATCH,
                    lr=0.01,
                    seed=seed,
                    val_split=0.2,
                    max_steps=TREND_STEPS,
                )
                maes[label] = training.evaluate(model, ds, indices=val_idx)[
                    "depth_error"
                ]
            better = maes["slice"] <= maes["base"]
            wins += int(better)
            rows.append(
                f"seed {seed}: slice {maes['slice']:.3f}m "
                f"vs base {maes['base']:.3f}m -> "
                f"{'slice' if better else 'base'}"
            )
        trend_holds = wins >= 3
        for row in rows:
            print(f"[acceptance]   {row}")
        verdict(
            "slice vs base trend (report only)",
            True,
            f"slice wins {wins}/{TREND_SEEDS} seeds, "
            f"trend {'holds' if trend_holds else 'does not hold'} "
            f"at {TREND_STEPS} steps",
        )


# -- synchronization ---------------------------------------------------------


class TestSynchronization:
    def test_offset_recovery_under_noise(self):
        start = time.perf_counter()
        offset = 37
        n = 2000
        hits = 0
        for trial in range(100):
            rng = np.random.default_rng(1000 + trial)
            speed = np.abs(np.cumsum(rng.normal(size=n)))
            flow_true = 2.5 * speed[offset:]
            noise = rng.normal(size=flow_true.size) * (0.05 * flow_true.std())
            flow = flow_true + noise
            stamps = np.arange(flow.size) / 10.0
            flow_series = sync.SignalSeries(stamps, flow, frequency=10.0)
            speed_series = sync.SignalSeries(
                np.arange(n) / 10.0, speed, frequency=10.0
            )
            try:
                result = sync.match_signals(flow_series, speed_series, 50)
            except sync.LowConfidenceError:
                continue
            if abs(result.offset - offset) <= 1:
                hits += 1
        elapsed = time.perf_counter() - start
        ok = hits >= 95 and elapsed < 10.0
        verdict(
            "synchronization",
            ok,
            f"{hits}/100 trials within +-1 of {offset}, {elapsed:.1f}s < 10s",
        )
        assert hits >= 95
        assert elapsed < 10.0


# -- scale recovery ----------------------------------------------------------


class TestScaleRecovery:
    def test_noisy_outlier_pairs(self):
        rng = np.random.default_rng(11)
        true_scale = 4.2
        n = 500
        unscaled = []
        scaled = []
        outliers = rng.uniform(size=n) < 0.10
        for i in range(n):
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            norm = rng.uniform(0.05, 0.5)
            noisy = true_scale * norm * (1.0 + rng.normal() * 0.02)
            if outliers[i]:
                noisy *= rng.uniform(0.1, 10.0)
            q = np.array([1.0, 0.0, 0.0, 0.0])
            unscaled.append(RelativePose(q, direction * norm, scaled=False))
            scaled.append(RelativePose(q, direction * noisy, scaled=True))
        _, global_scale = sync.find_scale(unscaled, scaled)
        err = abs(global_scale - true_scale) / true_scale
        ok = err < 0.02
        verdict(
            "scale recovery",
            ok,
            f"global {global_scale:.4f} vs 4.2, rel err {err:.4f} < 0.02",
        )
        assert ok


# -- pose algebra ------------------------------------------------------------


class TestPoseAlgebra:
    def test_round_trips_and_composition(self):
        rng = np.random.default_rng(5)

        def tiny_angle(q1, q2):
            # chord-based metric; arccos of the dot has a ~1e-8 noise floor
            # near zero angle, far above the error being measured
            d = min(np.linalg.norm(q1 - q2), np.linalg.norm(q1 + q2))
            return 2.0 * np.arcsin(min(1.0, d / 2.0))

        worst_rt = 0.0
        for _ in range(10_000):
            e = EulerAngles(*rng.uniform(-1.5, 1.5, size=3))
            q = euler_to_quat(e)
            back = quat_to_euler(q)
            q2 = euler_to_quat(back)
            worst_rt = max(worst_rt, tiny_angle(q, q2))

        worst_comp = 0.0
        for _ in range(200):
            chain = []
            for _ in range(rng.integers(2, 6)):
                e = EulerAngles(*rng.uniform(-1.5, 1.5, size=3))
                chain.append(
                    RelativePose(euler_to_quat(e), rng.uniform(-1, 1, size=3))
                )
            poses = compose_relative_poses(chain)
            # matrix oracle: accumulate rotation matrices and translations
            rot = np.eye(3)
            trans = np.zeros(3)
            for rel, pose in zip(chain, poses):
                trans = trans + rot @ rel.translation
                rot = rot @ quat_to_matrix(rel.rotation)
                worst_comp = max(
                    worst_comp,
                    np.abs(quat_to_matrix(pose.rotation) - rot).max(),
                    np.abs(pose.translation - trans).max(),
                )
        ok = worst_rt < 1e-9 and worst_comp < 1e-7
        verdict(
            "pose algebra",
            ok,
            f"10k round trips max {worst_rt:.2e} rad < 1e-9, "
            f"composition max {worst_comp:.2e} < 1e-7",
        )
        assert worst_rt < 1e-9
        assert worst_comp < 1e-7


# -- end-to-end pipeline -----------------------------------------------------

PIPELINE_PAD = 20        # true offset between video clock and pose-log clock
PIPELINE_VIDEO = 65      # one extra frame; the last has no flow sample
PIPELINE_TOTAL = 110
PIPELINE_ALPHA = 4.2     # how much smaller the "monocular" world is


def aperiodic_speed(u):
    """Two incommensurate sinusoids: enough structure for a sharp
    correlation peak, no period that could alias the offset."""
    return (
        1.0
        + 0.45 * np.sin(2 * np.pi * 4.7 * u)
        + 0.25 * np.sin(2 * np.pi * 1.9 * u + 1.0)
    )


class TestEndToEndPipeline:
    def test_dataset_built_from_scratch_trains(self, tmp_path):
        start = time.perf_counter()
        # altitude 8 keeps the fastest frame-to-frame image motion inside
        # the block matcher's search radius at this frame spacing
        poses, stamps, rgb, depth = render_flight(
            PIPELINE_TOTAL,
            RES,
            wobble=OVERFIT_WOBBLE,
            altitude=8.0,
            extent=OVERFIT_EXTENT,
            speed_profile=aperiodic_speed,
        )
        lo, hi = PIPELINE_PAD, PIPELINE_PAD + PIPELINE_VIDEO

        # the camera's clock restarts at zero; the pose log keeps the
        # flight's clock, so the sources are offset by PIPELINE_PAD samples
        video_dir = tmp_path / "video"
        manifest = datastore.write_dataset(
            video_dir,
            "video",
            poses[lo:hi],
            stamps[lo:hi] - stamps[lo],
            rgb[lo:hi],
            depth[lo:hi],
            depth_unit="meters",
        )
        gps = [(float(stamps[i]), poses[i]) for i in range(PIPELINE_TOTAL)]

        result, synced = sync.synchronize_dataset(
            video_dir, manifest, gps, max_offset=30
        )
        offset_ok = result.offset == PIPELINE_PAD

        # oracle monocular outputs: disparity alpha/z, translations t/alpha
        unscaled = []
        scaled = []
        idx = [f.index for f in synced.frames]
        for j in range(len(idx) - 1):
            i = lo + idx[j]
            rel = relative_from_absolute(poses[i], poses[i + 1])
            step = (poses[i + 1].translation - poses[i].translation)
            unscaled.append(
                RelativePose(rel.rotation, step / PIPELINE_ALPHA, scaled=False)
            )
            scaled.append(
                relative_from_absolute(
                    synced.frames[j].pose, synced.frames[j + 1].pose
                )
            )
        per_frame, global_scale = sync.find_scale(unscaled, scaled)
        scale_ok = abs(global_scale - PIPELINE_ALPHA) / PIPELINE_ALPHA < 0.02

        n = len(idx)
        metric_depth = np.zeros((n, RES, RES), dtype=np.float32)
        for j in range(n):
            disparity = PIPELINE_ALPHA / depth[lo + idx[j]]
            scale = float(per_frame[min(j, n - 2)])
            metric_depth[j] = sync.apply_scaling(disparity, scale)

        scaled_dir = tmp_path / "scaled"
        datastore.write_dataset(
            scaled_dir,
            "scaled",
            [f.pose for f in synced.frames],
            np.array([f.timestamp_s for f in synced.frames]),
            np.stack([rgb[lo + i] for i in idx]),
            metric_depth,
            depth_unit="meters",
        )
        ds = datastore.load_dataset(scaled_dir)

        _, report = run_overfit(ds)
        dlo, dhi = ds.depth_range
        depth_limit = DEPTH_FRACTION * (dhi - dlo)
        elapsed = time.perf_counter() - start
        ok = (
            offset_ok
            and scale_ok
            and report.rgb_px_error < RGB_THRESHOLD
            and report.depth_error < depth_limit
        )
        verdict(
            "end-to-end pipeline",
            ok,
            f"offset {result.offset} (true {PIPELINE_PAD}), "
            f"scale {global_scale:.4f} (true {PIPELINE_ALPHA}), "
            f"{n} frames trained: rgb {report.rgb_px_error:.2f}px < "
            f"{RGB_THRESHOLD}, depth {report.depth_error:.3f}m < "
            f"{depth_limit:.3f}m, {elapsed:.0f}s",
        )
        assert offset_ok
        assert scale_ok
        assert report.rgb_px_error < RGB_THRESHOLD, (
            f"rgb {report.rgb_px_error:.2f}px: the pipeline stages recover "
            "offset and scale; the trained render shares the overfit "
            "experiment's plateau (see README, known limits)"
        )
        assert report.depth_error < depth_limit


# -- determinism & formats ---------------------------------------------------


class TestDeterminismAndFormats:
    def test_training_dataset_checkpoint_stability(self, tmp_path):
        poses, stamps, rgb, depth = render_flight(8, 16, wobble=0.02)
        ds = dataset_from_arrays("determinism", poses, stamps, rgb, depth)
        cfg = ModelConfig(
            output_resolution=16,
            initial_channels=16,
            slices=4,
            bottleneck_depth=1,
        )

        trajectories = []
        for _ in range(2):
            model = build_model(cfg, ds.bounds, ds.depth_range, seed=0)
            report = training.train(
                model, ds, epochs=4, batch_size=4, lr=0.01, seed=0, val_split=0.0
            )
            trajectories.append(np.array(report.train_losses))
        traj_diff = float(np.abs(trajectories[0] - trajectories[1]).max())

        # dataset round trip: write, load, write again, compare digests
        d1, d2 = tmp_path / "ds1", tmp_path / "ds2"
        datastore.write_dataset(
            d1, "rt", poses, stamps, rgb, depth, depth_unit="meters"
        )
        loaded = datastore.load_dataset(d1)
        lo, hi = loaded.depth_range
        depth_back = (
            (loaded.rgbd[..., 3].astype(np.float64) + 1.0) / 2.0 * (hi - lo) + lo
        )
        datastore.write_dataset(
            d2,
            "rt",
            loaded.poses,
            loaded.timestamps,
            (loaded.rgbd[..., :3] + 1.0) / 2.0,
            depth_back,
            depth_unit="meters",
        )
        digest1 = tree_digest(d1)
        digest2 = tree_digest(d2)

        # checkpoint round trip: save, load, save again, compare bytes
        model = build_model(cfg, ds.bounds, ds.depth_range, seed=0)
        c1, c2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_model(model, c1)
        save_model(load_model(c1), c2)
        ckpt_ok = c1.read_bytes() == c2.read_bytes()

        ok = traj_diff < 1e-6 and digest1 == digest2 and ckpt_ok
        verdict(
            "determinism & formats",
            ok,
            f"loss trajectory diff {traj_diff:.1e} < 1e-6, "
            f"dataset digest stable {digest1 == digest2}, "
            f"checkpoint bytes stable {ckpt_ok}",
        )
        assert traj_diff < 1e-6
        assert digest1 == digest2
        assert ckpt_ok
