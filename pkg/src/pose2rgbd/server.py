"""HTTP render service and the image-encoding path it shares with the CLI.

One immutable model serves every request; nothing here mutates state, so
restarting the process cannot change a response. The CLI ``render``
subcommand calls the same ``render_pose_images`` helper, which keeps the
two paths byte-identical for a given checkpoint and pose.
"""

import base64
import io
import os
import threading
import time

import numpy as np
from PIL import Image

from pose2rgbd.network import Pose2RGBDModel
from pose2rgbd.poses import Pose, normalize_pose
from pose2rgbd.slicing import confidence_map

QUAT_REQUEST_TOL = 1e-3
THREADS_ENV = "P2RGBD_THREADS"


def _png_bytes(array: np.ndarray, mode: str) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def rgb_to_png(rgb_norm: np.ndarray) -> bytes:
    """(H,W,3) in [-1,1] -> 8-bit RGB PNG bytes."""
    quant = np.clip(np.round((rgb_norm + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)
    return _png_bytes(quant, "RGB")


def depth_to_png(depth_norm: np.ndarray) -> bytes:
    """(H,W) in [-1,1] -> linear grayscale PNG over the model depth range
    (near = dark, far = light)."""
    quant = np.clip(np.round((depth_norm + 1.0) / 2.0 * 255.0), 0, 255).astype(
        np.uint8
    )
    return _png_bytes(quant, "L")


def confidence_to_png(counts: np.ndarray) -> bytes:
    """Active-slice counts -> black (0), gray 128 (exactly 1), white (2+)."""
    img = np.zeros(counts.shape, dtype=np.uint8)
    img[counts == 1] = 128
    img[counts >= 2] = 255
    return _png_bytes(img, "L")


def clamp_request_pose(
    model: Pose2RGBDModel, translation, quaternion
) -> tuple[Pose, bool]:
    """Validate and normalize a requested pose against the model.

    Translations outside the trained bounds clamp to them (the scene only
    exists inside); quaternions renormalize if within 1e-3 of unit norm.
    Returns the effective pose and whether clamping changed anything."""
    t = np.asarray(translation, dtype=np.float64)
    q = np.asarray(quaternion, dtype=np.float64)
    if t.shape != (3,) or not np.all(np.isfinite(t)):
        raise ValueError("translation must be 3 finite numbers")
    if q.shape != (4,) or not np.all(np.isfinite(q)):
        raise ValueError("quaternion must be 4 finite numbers")
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > QUAT_REQUEST_TOL:
        raise ValueError(f"quaternion norm {norm:.6f} too far from 1")
    clamped_t = model.bounds.clamp(t)
    clamped = bool(np.any(clamped_t != t))
    return Pose(clamped_t, q / norm), clamped


def render_pose_images(model: Pose2RGBDModel, pose: Pose) -> dict:
    """-> {rgb_png, depth_png, confidence_png, render_ms}. The confidence
    image is all black for a model without slice channels."""
    start = time.perf_counter()
    encoded = normalize_pose(pose, model.bounds, mode=model.config.input_mode)
    rgbd, slices = model.predict(encoded[None, :].astype(np.float32))
    render_ms = (time.perf_counter() - start) * 1e3
    frame = rgbd[0]
    if slices is not None:
        counts = confidence_map(slices[0])
    else:
        counts = np.zeros(frame.shape[:2], dtype=np.int32)
    return {
        "rgb_png": rgb_to_png(frame[..., :3]),
        "depth_png": depth_to_png(frame[..., 3]),
        "confidence_png": confidence_to_png(counts),
        "render_ms": render_ms,
    }


def meta_payload(model: Pose2RGBDModel) -> dict:
    return {
        "bounds": {
            "min": model.bounds.minimum.tolist(),
            "max": model.bounds.maximum.tolist(),
        },
        "depth_range": list(model.depth_range),
        "resolution": model.config.output_resolution,
        "slices": model.config.slices,
        "input_mode": model.config.input_mode,
    }


def create_app(model: Pose2RGBDModel):
    """FastAPI application over one loaded model. ``P2RGBD_THREADS`` caps
    how many renders run at once (default 1; forwards already use BLAS
    threads internally)."""
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse
    from pydantic import BaseModel, Field

    class RenderRequest(BaseModel):
        translation: list[float] = Field(min_length=3, max_length=3)
        quaternion: list[float] = Field(min_length=4, max_length=4)

    limit = max(1, int(os.environ.get(THREADS_ENV, "1")))
    gate = threading.BoundedSemaphore(limit)
    app = FastAPI(title="pose2rgbd render service")

    @app.exception_handler(RequestValidationError)
    async def invalid_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/meta")
    def meta():
        return meta_payload(model)

    @app.post("/render")
    def render(req: RenderRequest):
        try:
            pose, clamped = clamp_request_pose(model, req.translation, req.quaternion)
        except ValueError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        with gate:
            images = render_pose_images(model, pose)
        return {
            "rgb_png": base64.b64encode(images["rgb_png"]).decode(),
            "depth_png": base64.b64encode(images["depth_png"]).decode(),
            "confidence_png": base64.b64encode(images["confidence_png"]).decode(),
            "render_ms": images["render_ms"],
            "clamped": clamped,
            "pose": {
                "translation": pose.translation.tolist(),
                "quaternion": pose.rotation.tolist(),
            },
        }

    return app
