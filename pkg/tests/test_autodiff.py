"""Tensor-core tests: every op against a brute-force oracle, every gradient
against central finite differences."""

import numpy as np
import pytest

from pose2rgbd import autodiff as ad
from pose2rgbd.autodiff import Tensor
from pose2rgbd.optim import AdamW, OptimizerError


# -- brute-force oracles ----------------------------------------------------


def dense_oracle(x, w, b):
    bsz, i = x.shape
    _, o = w.shape
    y = np.zeros((bsz, o), dtype=np.float64)
    for n in range(bsz):
        for j in range(o):
            acc = b[j]
            for k in range(i):
                acc += x[n, k] * w[k, j]
            y[n, j] = acc
    return y


def conv2d_oracle(x, k, stride, pad):
    bsz, c, h, w = x.shape
    o, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    y = np.zeros((bsz, o, oh, ow), dtype=np.float64)
    for n in range(bsz):
        for oc in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ic in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (
                                    xp[n, ic, i * stride + u, j * stride + v]
                                    * k[oc, ic, u, v]
                                )
                    y[n, oc, i, j] = acc
    return y


def conv2d_input_grad_oracle(gy, k, x_shape, stride, pad):
    """d(conv2d)/dx by direct scatter; the adjoint conv_transpose2d must match."""
    bsz, c, h, w = x_shape
    o, _, kh, kw = k.shape
    _, _, oh, ow = gy.shape
    gxp = np.zeros((bsz, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for n in range(bsz):
        for oc in range(o):
            for i in range(oh):
                for j in range(ow):
                    g = gy[n, oc, i, j]
                    for ic in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                gxp[n, ic, i * stride + u, j * stride + v] += (
                                    g * k[oc, ic, u, v]
                                )
    if pad:
        return gxp[:, :, pad:-pad, pad:-pad]
    return gxp


def adamw_scalar_oracle(x0, grads, lr, beta1, beta2, eps, wd):
    """Plain-float AdamW trajectory for a single scalar parameter."""
    x, m, v = x0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mh = m / (1 - beta1**t)
        vh = v / (1 - beta2**t)
        x = x - lr * wd * x
        x = x - lr * mh / (vh**0.5 + eps)
        out.append(x)
    return out


def central_diff(f, arr, h=1e-5):
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gf[i] = (up - down) / (2 * h)
    return g


# -- dense ------------------------------------------------------------------


class TestDense:
    def test_identity(self):
        x = Tensor(np.array([[1.0, 2.0]]))
        w = Tensor(np.eye(2))
        b = Tensor(np.zeros(2))
        np.testing.assert_allclose(ad.dense(x, w, b).data, [[1.0, 2.0]])

    def test_bias_passthrough(self):
        x = Tensor(np.zeros((1, 3)))
        w = Tensor(np.random.default_rng(0).normal(size=(3, 2)))
        b = Tensor(np.array([3.0, 4.0]))
        np.testing.assert_allclose(ad.dense(x, w, b).data, [[3.0, 4.0]])

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 3))
        w = rng.normal(size=(3, 5))
        b = rng.normal(size=5)
        got = ad.dense(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(got, dense_oracle(x, w, b), atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            ad.dense(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), Tensor(np.ones(2)))

    def test_gradients(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)
        t = Tensor(rng.normal(size=(3, 2)))

        def loss():
            return ad.mse_loss(ad.dense(x, w, b), t)

        val = loss()
        val.backward()
        for p in (x, w, b):
            num = central_diff(lambda: float(loss().data), p.data)
            np.testing.assert_allclose(p.grad, num, rtol=1e-6, atol=1e-8)


# -- conv2d -----------------------------------------------------------------


class TestConv2d:
    def test_one_by_one_identity(self):
        x = np.random.default_rng(3).normal(size=(1, 1, 4, 4))
        k = np.ones((1, 1, 1, 1))
        got = ad.conv2d(Tensor(x), Tensor(k), stride=1, pad=0).data
        np.testing.assert_allclose(got, x)

    def test_size_arithmetic(self):
        x = Tensor(np.zeros((1, 1, 5, 5)))
        k = Tensor(np.zeros((1, 1, 3, 3)))
        assert ad.conv2d(x, k, stride=1, pad=1).shape == (1, 1, 5, 5)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(1, 2, 6, 6))
        k = rng.normal(size=(3, 2, 3, 3))
        for stride, pad in [(1, 0), (1, 1), (2, 1)]:
            got = ad.conv2d(Tensor(x), Tensor(k), stride, pad).data
            want = conv2d_oracle(x, k, stride, pad)
            np.testing.assert_allclose(got, want, atol=1e-5)

    def test_kernel_too_large(self):
        with pytest.raises(ValueError, match="kernel larger"):
            ad.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 5, 5))))

    def test_gradients(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(2, 2, 5, 5)), requires_grad=True)
        k = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        t = Tensor(rng.normal(size=(2, 3, 3, 3)))

        def loss():
            return ad.mse_loss(ad.conv2d(x, k, stride=2, pad=1), t)

        loss().backward()
        for p in (x, k):
            num = central_diff(lambda: float(loss().data), p.data)
            np.testing.assert_allclose(p.grad, num, rtol=1e-5, atol=1e-8)


# -- conv_transpose2d -------------------------------------------------------


class TestConvTranspose2d:
    def test_size_arithmetic(self):
        x = Tensor(np.zeros((1, 1, 4, 4)))
        k = Tensor(np.zeros((1, 1, 4, 4)))
        assert ad.conv_transpose2d(x, k, stride=2, pad=1).shape == (1, 1, 8, 8)

    def test_identity(self):
        x = np.random.default_rng(6).normal(size=(1, 1, 1, 1))
        k = np.ones((1, 1, 1, 1))
        got = ad.conv_transpose2d(Tensor(x), Tensor(k), stride=1, pad=0).data
        np.testing.assert_allclose(got, x)

    def test_forward_is_adjoint_of_conv(self):
        # conv_transpose2d(g) must equal the conv2d input-gradient for the
        # same kernel and hyperparameters (kernel axes swapped to (C,O,..)).
        rng = np.random.default_rng(7)
        for stride, pad, h in [(1, 0, 5), (2, 1, 4), (2, 0, 3)]:
            k = rng.normal(size=(3, 2, 4, 4))  # (O, C, kh, kw) for the conv
            x_shape = (1, 2, (h - 1) * stride + 4 - 2 * pad, (h - 1) * stride + 4 - 2 * pad)
            gy = rng.normal(size=(1, 3, h, h))
            want = conv2d_input_grad_oracle(gy, k, x_shape, stride, pad)
            got = ad.conv_transpose2d(
                Tensor(gy), Tensor(k.transpose(0, 1, 2, 3)), stride, pad
            )
            np.testing.assert_allclose(got.data, want, atol=1e-5)

    def test_negative_output_size(self):
        with pytest.raises(ValueError, match="not positive"):
            ad.conv_transpose2d(
                Tensor(np.ones((1, 1, 1, 1))), Tensor(np.ones((1, 1, 2, 2))), 1, 1
            )

    def test_gradients(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.normal(size=(2, 3, 3, 3)), requires_grad=True)
        k = Tensor(rng.normal(size=(3, 2, 4, 4)), requires_grad=True)
        t = Tensor(rng.normal(size=(2, 2, 6, 6)))

        def loss():
            return ad.mse_loss(ad.conv_transpose2d(x, k, stride=2, pad=1), t)

        loss().backward()
        for p in (x, k):
            num = central_diff(lambda: float(loss().data), p.data)
            np.testing.assert_allclose(p.grad, num, rtol=1e-5, atol=1e-8)


# -- channel bias -----------------------------------------------------------


class TestChannelBias:
    def test_values(self):
        x = np.zeros((2, 3, 2, 2))
        b = np.array([1.0, 2.0, 3.0])
        got = ad.channel_bias(Tensor(x), Tensor(b)).data
        for c in range(3):
            np.testing.assert_allclose(got[:, c], b[c])

    def test_dense_shape(self):
        x = np.zeros((4, 3))
        got = ad.channel_bias(Tensor(x), Tensor(np.array([1.0, 2.0, 3.0]))).data
        np.testing.assert_allclose(got, [[1, 2, 3]] * 4)

    def test_mismatch(self):
        with pytest.raises(ValueError, match="does not match"):
            ad.channel_bias(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))

    def test_gradients(self):
        rng = np.random.default_rng(30)
        x = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        t = Tensor(rng.normal(size=(2, 3, 4, 4)))

        def loss():
            return ad.mse_loss(ad.channel_bias(x, b), t)

        loss().backward()
        for p in (x, b):
            num = central_diff(lambda: float(loss().data), p.data)
            np.testing.assert_allclose(p.grad, num, rtol=1e-6, atol=1e-9)


# -- batch norm -------------------------------------------------------------


class TestBatchNorm:
    def test_constant_batch_gives_zeros(self):
        x = Tensor(np.full((4, 3, 2, 2), 7.0))
        gamma = Tensor(np.ones(3))
        beta = Tensor(np.zeros(3))
        rs = ad.RunningStats.create(3)
        y = ad.batch_norm(x, gamma, beta, rs, training=True)
        np.testing.assert_allclose(y.data, 0.0, atol=1e-6)

    def test_affine_passthrough(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(8, 2, 4, 4))
        rs = ad.RunningStats.create(2)
        base = ad.batch_norm(
            Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rs, training=True
        )
        scaled = ad.batch_norm(
            Tensor(x), Tensor(np.full(2, 2.0)), Tensor(np.full(2, 3.0)), rs, training=True
        )
        np.testing.assert_allclose(scaled.data, 2 * base.data + 3, atol=1e-5)

    def test_moments(self):
        rng = np.random.default_rng(10)
        x = rng.normal(loc=3.0, scale=2.0, size=(16, 4, 8, 8))
        rs = ad.RunningStats.create(4)
        y = ad.batch_norm(
            Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), rs, training=True
        ).data
        assert np.abs(y.mean(axis=(0, 2, 3))).max() < 1e-6
        assert np.abs(y.var(axis=(0, 2, 3)) - 1.0).max() < 1e-4

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValueError, match="batch size"):
            ad.batch_norm(
                Tensor(np.ones((1, 2, 2, 2))),
                Tensor(np.ones(2)),
                Tensor(np.zeros(2)),
                ad.RunningStats.create(2),
                training=True,
            )

    def test_inference_uses_running_stats(self):
        rs = ad.RunningStats.create(1)
        rs.mean[:] = 2.0
        rs.var[:] = 4.0
        x = Tensor(np.full((1, 1, 2, 2), 4.0))
        y = ad.batch_norm(
            x, Tensor(np.ones(1)), Tensor(np.zeros(1)), rs, training=False
        )
        np.testing.assert_allclose(y.data, 1.0, atol=1e-4)

    def test_gradients_training_mode(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(4, 2, 3, 3)), requires_grad=True)
        gamma = Tensor(rng.normal(size=2), requires_grad=True)
        beta = Tensor(rng.normal(size=2), requires_grad=True)
        t = Tensor(rng.normal(size=(4, 2, 3, 3)))

        def loss():
            rs = ad.RunningStats.create(2, dtype=np.float64)
            return ad.mse_loss(ad.batch_norm(x, gamma, beta, rs, training=True), t)

        loss().backward()
        for p in (x, gamma, beta):
            num = central_diff(lambda: float(loss().data), p.data)
            np.testing.assert_allclose(p.grad, num, rtol=1e-4, atol=1e-8)


# -- activations ------------------------------------------------------------


class TestActivations:
    def test_values(self):
        assert ad.tanh(Tensor(np.zeros(1))).data.item() == 0.0
        assert ad.sigmoid(Tensor(np.zeros(1))).data.item() == 0.5
        assert ad.relu(Tensor(np.array([-1.0]))).data.item() == 0.0

    def test_tanh_saturation(self):
        y = ad.tanh(Tensor(np.array([-15.0, 15.0], dtype=np.float64))).data
        assert np.all(np.abs(y) < 1.0)
        y = ad.tanh(Tensor(np.array([-500.0, 500.0], dtype=np.float64))).data
        assert np.all(np.abs(y) <= 1.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown activation"):
            ad.activation(Tensor(np.zeros(1)), "gelu")

    @pytest.mark.parametrize("kind", ["relu", "tanh", "sigmoid"])
    def test_gradients(self, kind):
        rng = np.random.default_rng(12)
        vals = rng.normal(size=16)
        vals = vals + 0.05 * np.sign(vals)  # keep away from relu's kink
        x = Tensor(vals.reshape(4, 4), requires_grad=True)
        t = Tensor(rng.normal(size=(4, 4)))

        def loss():
            return ad.mse_loss(ad.activation(x, kind), t)

        loss().backward()
        num = central_diff(lambda: float(loss().data), x.data, h=1e-6)
        np.testing.assert_allclose(x.grad, num, rtol=1e-6, atol=1e-9)


# -- losses -----------------------------------------------------------------


class TestLosses:
    def test_mse_zero_on_equal(self):
        x = np.random.default_rng(13).normal(size=(3, 3))
        assert float(ad.mse_loss(Tensor(x), Tensor(x.copy())).data) == 0.0

    def test_mse_unit_offset(self):
        x = np.zeros((4, 4))
        got = ad.mse_loss(Tensor(x + 1.0), Tensor(x)).data
        assert float(got) == pytest.approx(1.0)

    def test_mse_matches_loop(self):
        rng = np.random.default_rng(14)
        a, b = rng.normal(size=(2, 5, 5))
        want = sum(
            (a[i, j] - b[i, j]) ** 2 for i in range(5) for j in range(5)
        ) / 25.0
        got = float(ad.mse_loss(Tensor(a), Tensor(b)).data)
        assert got == pytest.approx(want, abs=1e-7)

    def test_mse_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            ad.mse_loss(Tensor(np.zeros(2)), Tensor(np.zeros(3)))

    def test_bce_half(self):
        got = float(ad.bce_loss(Tensor(np.full(4, 0.5)), Tensor(np.ones(4))).data)
        assert got == pytest.approx(np.log(2.0), abs=1e-6)

    def test_bce_confident_correct(self):
        p = np.full(4, 1.0 - ad.BCE_EPS)
        got = float(ad.bce_loss(Tensor(p), Tensor(np.ones(4))).data)
        assert got == pytest.approx(0.0, abs=1e-5)

    def test_bce_matches_loop(self):
        rng = np.random.default_rng(15)
        p = rng.uniform(0.01, 0.99, size=12)
        t = (rng.uniform(size=12) > 0.5).astype(np.float64)
        want = -np.mean(t * np.log(p) + (1 - t) * np.log(1 - p))
        got = float(ad.bce_loss(Tensor(p), Tensor(t)).data)
        assert got == pytest.approx(want, abs=1e-6)

    def test_bce_rejects_soft_targets(self):
        with pytest.raises(ValueError, match="exactly 0 or 1"):
            ad.bce_loss(Tensor(np.full(3, 0.5)), Tensor(np.full(3, 0.5)))

    def test_loss_gradients(self):
        rng = np.random.default_rng(16)
        p = Tensor(rng.uniform(0.05, 0.95, size=(3, 4)), requires_grad=True)
        t = Tensor((rng.uniform(size=(3, 4)) > 0.5).astype(np.float64))

        def loss():
            return ad.bce_loss(p, t)

        loss().backward()
        num = central_diff(lambda: float(loss().data), p.data, h=1e-7)
        np.testing.assert_allclose(p.grad, num, rtol=1e-5, atol=1e-8)


# -- scalar combination and finiteness --------------------------------------


class TestGraphBasics:
    def test_weighted_sum_of_losses(self):
        a = Tensor(np.array(2.0), requires_grad=True)
        b = Tensor(np.array(3.0), requires_grad=True)
        out = a + b * 0.5
        out.backward()
        assert float(out.data) == pytest.approx(3.5)
        assert float(a.grad) == pytest.approx(1.0)
        assert float(b.grad) == pytest.approx(0.5)

    def test_nan_propagation_is_an_error(self):
        x = Tensor(np.array([np.nan, 1.0]), requires_grad=True)
        with pytest.raises(FloatingPointError):
            ad.relu(x)

    def test_inf_in_loss_is_an_error(self):
        with pytest.raises(FloatingPointError):
            ad.mse_loss(
                Tensor(np.array([1e200], dtype=np.float64)),
                Tensor(np.array([-1e200], dtype=np.float64)),
            )


# -- AdamW ------------------------------------------------------------------


class TestAdamW:
    def test_first_step_is_signed_lr(self):
        p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        opt = AdamW([p], lr=0.01, weight_decay=0.0)
        p.grad = np.array([0.5, -0.25, 1.0])
        before = p.data.copy()
        opt.step()
        # bias-corrected first step reduces to g / (|g| + eps) ~= sign(g)
        np.testing.assert_allclose(
            p.data, before - 0.01 * np.sign(p.grad), atol=1e-6
        )

    def test_decoupled_decay_shrinks_params(self):
        p = Tensor(np.array([2.0]), requires_grad=True)
        opt = AdamW([p], lr=0.01, weight_decay=0.01)
        p.grad = np.zeros(1)
        opt.step()
        # zero gradient: only the decay term acts
        assert p.data.item() == pytest.approx(2.0 * (1 - 0.01 * 0.01), abs=1e-9)

    def test_quadratic_descent_matches_scalar_oracle(self):
        p = Tensor(np.array(1.0, dtype=np.float64), requires_grad=True)
        opt = AdamW([p], lr=0.01, weight_decay=0.0)
        seen = []
        grads = []
        for _ in range(50):
            grads.append(2.0 * float(p.data))
            p.grad = np.array(2.0 * float(p.data))
            opt.step()
            seen.append(float(p.data))
        want = adamw_scalar_oracle(1.0, grads, 0.01, 0.9, 0.999, 1e-8, 0.0)
        np.testing.assert_allclose(seen, want, atol=1e-12)
        # far from the minimum the Adam step never flips sign, so the
        # magnitude shrinks every step
        mags = [1.0] + [abs(v) for v in seen]
        assert all(b < a for a, b in zip(mags, mags[1:]))

    def test_matches_plain_adam_when_decay_off(self):
        rng = np.random.default_rng(17)
        p = Tensor(rng.normal(size=6), requires_grad=True)
        ref = p.data.copy()
        opt = AdamW([p], lr=0.01, weight_decay=0.0)
        m = np.zeros(6)
        v = np.zeros(6)
        for t in range(1, 21):
            g = rng.normal(size=6)
            p.grad = g.copy()
            opt.step()
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.01 * (m / (1 - 0.9**t)) / (
                np.sqrt(v / (1 - 0.999**t)) + 1e-8
            )
            np.testing.assert_allclose(p.data, ref, atol=1e-7)

    def test_missing_gradient(self):
        p = Tensor(np.ones(2), requires_grad=True)
        opt = AdamW([p], lr=0.01)
        with pytest.raises(OptimizerError, match="missing gradient"):
            opt.step()

    def test_invalid_hyperparameters(self):
        p = Tensor(np.ones(1), requires_grad=True)
        with pytest.raises(ValueError):
            AdamW([p], beta1=1.0)
        with pytest.raises(ValueError):
            AdamW([p], eps=0.0)


# -- grad_check utility -----------------------------------------------------


class TestGradCheck:
    def test_dense_layer_passes(self):
        rng = np.random.default_rng(18)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 2)), requires_grad=True, name="w")
        b = Tensor(rng.normal(size=2), requires_grad=True, name="b")
        t = Tensor(rng.normal(size=(3, 2)))
        report = ad.grad_check(
            lambda: ad.mse_loss(ad.dense(x, w, b), t), [x, w, b]
        )
        assert report.max_rel_error < 1e-6
        assert report.passed

    def test_constant_function_zero_both_ways(self):
        p = Tensor(np.ones(3), requires_grad=True, name="p")
        c = Tensor(np.zeros(3))

        def fn():
            # loss ignores p entirely
            return ad.mse_loss(c, Tensor(np.zeros(3)))

        report = ad.grad_check(fn, [p])
        assert report.max_rel_error == 0.0

    def test_rejects_float32(self):
        p = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        with pytest.raises(ValueError, match="float64"):
            ad.grad_check(lambda: ad.mse_loss(p, p), [p])
