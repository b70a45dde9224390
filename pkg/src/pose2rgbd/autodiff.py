"""Reverse-mode automatic differentiation on numpy arrays.

A deliberately small tensor core: exactly the operations the pose-to-RGBD
generators need (dense, strided conv / transposed conv, batch norm, the three
activations, MSE and BCE losses) plus elementwise add/scale for combining loss
terms. Convolutions use the cross-correlation convention and are backed by
im2col/col2im so the heavy lifting lands in BLAS. Default compute dtype is
float32; build graphs in float64 for finite-difference gradient checks.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

# When enabled, every op output is checked for NaN/Inf. Losses and the
# optimizer always check regardless; this flag extends the net to every node.
_CHECK_FINITE = True


def set_finite_checks(enabled: bool) -> None:
    global _CHECK_FINITE
    _CHECK_FINITE = enabled


def _ensure_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {op}")


class Tensor:
    """N-dimensional array with an optional gradient and a backward closure.

    Tensors are immutable once produced by an op, except for gradient
    accumulation during a backward pass. ``data`` must be float32 or float64;
    ops inherit the dtype of their inputs.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev: tuple[Tensor, ...] = ()
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Run reverse-mode accumulation from this (scalar) tensor."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- minimal arithmetic for combining scalar loss terms ------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return _add(self, other)
        return _scale_shift(self, 1.0, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor*tensor products are not part of this core")
        return _scale_shift(self, float(other), 0.0)

    __rmul__ = __mul__

    def item(self) -> float:
        return float(self.data)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    if _CHECK_FINITE:
        _ensure_finite(data, op)
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._prev = tuple(p for p in parents if p.requires_grad or p._prev)
        out._backward = backward
    return out


def _add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(a.data + b.data, (a, b), backward, "add")


def _scale_shift(a: Tensor, scale: float, shift: float) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g * scale)

    return _make(a.data * scale + shift, (a,), backward, "scale")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = x.shape

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(orig))

    return _make(x.data.reshape(shape), (x,), backward, "reshape")


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        backward,
        "concat",
    )


def channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias to (B,C) or (B,C,H,W) activations."""
    if b.data.ndim != 1 or x.data.ndim < 2 or x.shape[1] != b.shape[0]:
        raise ValueError(
            f"channel_bias: bias {b.shape} does not match axis 1 of {x.shape}"
        )
    bshape = (1, b.shape[0]) + (1,) * (x.data.ndim - 2)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g)
        if b.requires_grad:
            axes = (0,) + tuple(range(2, g.ndim))
            b._accumulate(g.sum(axis=axes))

    return _make(x.data + b.data.reshape(bshape), (x, b), backward, "channel_bias")


# -- dense ------------------------------------------------------------------


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b for x (B, I), w (I, O), b (O,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ValueError("dense expects x (B,I), w (I,O), b (O,)")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ValueError(
            f"dense: dimension mismatch x{x.shape} w{w.shape} b{b.shape}"
        )

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _make(x.data @ w.data + b.data, (x, w, b), backward, "dense")


# -- convolutions -----------------------------------------------------------


def _conv_out_size(h: int, k: int, stride: int, pad: int) -> int:
    return (h + 2 * pad - k) // stride + 1


def _im2col(xd: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(B,C,H,W) -> (B, OH*OW, C*kh*kw) patch matrix."""
    b, c, h, w = xd.shape
    if pad:
        xd = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(w, kw, stride, pad)
    win = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, C, OH, OW, kh, kw)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * kh * kw)


def _col2im(
    cols: np.ndarray,
    out_shape: tuple[int, int, int, int],
    grid: tuple[int, int],
    kh: int,
    kw: int,
    stride: int,
    pad: int,
) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back onto the image plane."""
    b, c, h, w = out_shape
    oh, ow = grid
    img = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    patches = cols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            img[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                patches[:, :, i, j]
            )
    if pad:
        img = img[:, :, pad : pad + h, pad : pad + w]
    return img


def conv2d(x: Tensor, k: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Strided 2D cross-correlation: x (B,C,H,W), k (O,C,kh,kw)."""
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ValueError("conv2d expects x (B,C,H,W) and k (O,C,kh,kw)")
    bsz, c, h, w = x.shape
    o, kc, kh, kw = k.shape
    if kc != c:
        raise ValueError(f"conv2d: channel mismatch x has {c}, kernel expects {kc}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ValueError("conv2d: kernel larger than padded input")
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(w, kw, stride, pad)

    cols = _im2col(x.data, kh, kw, stride, pad)  # (B, OH*OW, C*kh*kw)
    wm = k.data.reshape(o, c * kh * kw)
    y = (cols.reshape(-1, c * kh * kw) @ wm.T).reshape(bsz, oh, ow, o)
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)  # (B*OH*OW, O)
        if k.requires_grad:
            k._accumulate(
                (gm.T @ cols.reshape(-1, c * kh * kw)).reshape(k.shape)
            )
        if x.requires_grad:
            dcols = (gm @ wm).reshape(bsz, oh * ow, c * kh * kw)
            x._accumulate(
                _col2im(dcols, (bsz, c, h, w), (oh, ow), kh, kw, stride, pad)
            )

    return _make(y, (x, k), backward, "conv2d")


def conv_transpose2d(x: Tensor, k: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Transposed conv (adjoint of conv2d): x (B,C,H,W), k (C,O,kh,kw).

    Output spatial size is (H-1)*stride - 2*pad + kh.
    """
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ValueError("conv_transpose2d expects x (B,C,H,W) and k (C,O,kh,kw)")
    bsz, c, h, w = x.shape
    kc, o, kh, kw = k.shape
    if kc != c:
        raise ValueError(
            f"conv_transpose2d: channel mismatch x has {c}, kernel expects {kc}"
        )
    oh = (h - 1) * stride - 2 * pad + kh
    ow = (w - 1) * stride - 2 * pad + kw
    if oh <= 0 or ow <= 0:
        raise ValueError("conv_transpose2d: computed output size is not positive")

    wm = k.data.reshape(c, o * kh * kw)
    xm = x.data.transpose(0, 2, 3, 1).reshape(-1, c)  # (B*H*W, C)
    cols = (xm @ wm).reshape(bsz, h * w, o * kh * kw)
    y = _col2im(cols, (bsz, o, oh, ow), (h, w), kh, kw, stride, pad)

    def backward(g):
        gcols = _im2col(g, kh, kw, stride, pad)  # (B, H*W, O*kh*kw)
        if k.requires_grad:
            k._accumulate(
                (xm.T @ gcols.reshape(-1, o * kh * kw)).reshape(k.shape)
            )
        if x.requires_grad:
            dx = (gcols.reshape(-1, o * kh * kw) @ wm.T).reshape(bsz, h, w, c)
            x._accumulate(np.ascontiguousarray(dx.transpose(0, 3, 1, 2)))

    return _make(y, (x, k), backward, "conv_transpose2d")


# -- batch normalization ----------------------------------------------------


@dataclass
class RunningStats:
    """Per-channel running mean/variance, updated in training mode."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def create(cls, channels: int, dtype=np.float32, momentum: float = 0.1):
        return cls(
            mean=np.zeros(channels, dtype=dtype),
            var=np.ones(channels, dtype=dtype),
            momentum=momentum,
        )


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: RunningStats,
    training: bool,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over axis 1 of (B,C) or (B,C,H,W) input."""
    if x.data.ndim not in (2, 4):
        raise ValueError("batch_norm expects (B,C) or (B,C,H,W) input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError("batch_norm: gamma/beta must have one value per channel")
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.data.ndim == 2 else (1, c, 1, 1)

    if training:
        if x.shape[0] < 2:
            raise ValueError("batch_norm requires batch size >= 2 in training mode")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running.mean += running.momentum * (mu.astype(running.mean.dtype) - running.mean)
        running.var += running.momentum * (var.astype(running.var.dtype) - running.var)
    else:
        mu = running.mean.astype(x.dtype)
        var = running.var.astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    y = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)
    n = x.data.size // c

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(bshape)
            if training:
                # d/dx of batch statistics included
                sum_g = gxhat.sum(axis=axes).reshape(bshape)
                sum_gx = (gxhat * xhat).sum(axis=axes).reshape(bshape)
                dx = (gxhat - sum_g / n - xhat * sum_gx / n) * inv_std.reshape(bshape)
            else:
                dx = gxhat * inv_std.reshape(bshape)
            x._accumulate(dx)

    return _make(y, (x, gamma, beta), backward, "batch_norm")


# -- activations ------------------------------------------------------------


class KinkMargin:
    """Smallest |input| seen at nonsmooth ops during tracked forward passes.

    Finite differences are only meaningful away from relu's kink; a checker
    can use this to verify its evaluation point keeps every preactivation
    farther from zero than the probe step can reach.
    """

    def __init__(self):
        self.min_abs = float("inf")

    def note(self, arr: np.ndarray) -> None:
        if arr.size:
            self.min_abs = min(self.min_abs, float(np.abs(arr).min()))


_KINK_TRACKER: KinkMargin | None = None


@contextmanager
def track_kink_margin():
    global _KINK_TRACKER
    prev = _KINK_TRACKER
    _KINK_TRACKER = KinkMargin()
    try:
        yield _KINK_TRACKER
    finally:
        _KINK_TRACKER = prev


def relu(x: Tensor) -> Tensor:
    if _KINK_TRACKER is not None:
        _KINK_TRACKER.note(x.data)
    mask = x.data > 0

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return _make(x.data * mask, (x,), backward, "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (1.0 - y * y))

    return _make(y, (x,), backward, "tanh")


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # exp(-x) saturates harmlessly to inf
        y = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * y * (1.0 - y))

    return _make(y, (x,), backward, "sigmoid")


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


# -- losses -----------------------------------------------------------------


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    with np.errstate(over="ignore"):  # finiteness check below reports overflow
        out = np.asarray(np.mean(diff * diff), dtype=pred.dtype)
    _ensure_finite(out, "mse_loss")

    def backward(g):
        scale = 2.0 * float(g) / n
        if pred.requires_grad:
            pred._accumulate(diff * scale)
        if target.requires_grad:
            target._accumulate(diff * (-scale))

    return _make(out, (pred, target), backward, "mse_loss")


BCE_EPS = 1e-7


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross entropy; predictions clamped to [eps, 1-eps]."""
    if pred.shape != target.shape:
        raise ValueError(f"bce_loss: shape mismatch {pred.shape} vs {target.shape}")
    t = target.data
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("bce_loss: target values must be exactly 0 or 1")
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    inside = (pred.data > BCE_EPS) & (pred.data < 1.0 - BCE_EPS)
    n = p.size
    out = np.asarray(
        np.mean(-(t * np.log(p) + (1.0 - t) * np.log1p(-p))), dtype=pred.dtype
    )
    _ensure_finite(out, "bce_loss")

    def backward(g):
        if pred.requires_grad:
            dp = (-(t / p) + (1.0 - t) / (1.0 - p)) * (float(g) / n)
            pred._accumulate(dp * inside)

    return _make(out, (pred, target), backward, "bce_loss")


# -- gradient checking ------------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"grad check {verdict}: max rel error {self.max_rel_error:.3e} "
            f"(tolerance {self.tolerance:.1e}, {len(self.entries)} coords)"
        )


def grad_check(
    fn,
    params: list[Tensor],
    h: float = 1e-5,
    tolerance: float = 1e-4,
    samples_per_param: int = 6,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` must rebuild and return the scalar loss from the current values of
    ``params``, all of which must be float64 (finite differences are not
    reliable in float32). A deterministic sample of coordinates is checked in
    each parameter tensor.
    """
    for p in params:
        if p.dtype != np.float64:
            raise ValueError(
                f"grad_check requires float64 parameters, got {p.dtype} "
                f"for {p.name or 'unnamed tensor'}"
            )
    for p in params:
        p.zero_grad()
    loss = fn()
    loss.backward()
    analytic = [
        np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params
    ]

    rng = np.random.default_rng(seed)
    report = GradCheckReport(max_rel_error=0.0, tolerance=tolerance)
    for p, a in zip(params, analytic):
        flat_n = p.data.size
        count = min(samples_per_param, flat_n)
        coords = rng.choice(flat_n, size=count, replace=False)
        flat = p.data.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = float(fn().data)
            flat[c] = orig - h
            down = float(fn().data)
            flat[c] = orig
            numeric = (up - down) / (2.0 * h)
            ana = float(a.reshape(-1)[c])
            denom = max(abs(ana), abs(numeric), 1e-6)
            rel = abs(ana - numeric) / denom
            idx = tuple(int(v) for v in np.unravel_index(int(c), p.shape))
            report.entries.append(GradCheckEntry(p.name, idx, ana, numeric, rel))
            report.max_rel_error = max(report.max_rel_error, rel)
    return report
