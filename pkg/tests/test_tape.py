"""Finite-difference validation of every tape op, plus graph mechanics."""

import numpy as np
import pytest

from bodyspace import tape
from helpers import check_grads, numeric_grad, rel_err


def make_param(rng, shape, name, dtype=np.float64, scale=1.0):
    return tape.parameter((rng.standard_normal(shape) * scale).astype(dtype), name=name)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_elementwise_ops_match_fd(rng):
    a = make_param(rng, (4, 3), "a")
    b = make_param(rng, (4, 3), "b")

    def loss():
        x = tape.mul(tape.add(a, b), tape.sub(a, 0.3))
        x = tape.div(x, tape.add(tape.square(b), 2.0))
        x = tape.add(x, tape.exp(tape.mul(a, 0.1)))
        x = tape.add(x, tape.sin(b))
        x = tape.add(x, tape.cos(a))
        x = tape.add(x, tape.sigmoid(b))
        x = tape.add(x, tape.relu(a))
        x = tape.add(x, tape.sqrt(tape.add(tape.square(a), 1.0)))
        return tape.sum_(x)

    check_grads(loss, [a, b])


def test_softplus_matches_fd_and_is_stable(rng):
    a = tape.parameter(np.array([-800.0, -5.0, -0.2, 0.0, 0.4, 30.0, 700.0]), name="a")
    out = tape.softplus(a).data
    assert np.all(np.isfinite(out))
    assert out[0] == 0.0 and abs(out[-1] - 700.0) < 1e-9
    b = tape.parameter(rng.standard_normal(9) * 2, name="b")

    def loss():
        return tape.sum_(tape.square(tape.softplus(b)))

    check_grads(loss, [b])


def test_log_pow_abs(rng):
    a = tape.parameter(rng.uniform(0.5, 2.0, (5,)), name="a")

    def loss():
        return tape.sum_(tape.add(tape.log(a), tape.add(tape.pow_const(a, 3), tape.absval(a))))

    check_grads(loss, [a])


def test_broadcasting_add_mul(rng):
    a = make_param(rng, (4, 3), "a")
    v = make_param(rng, (3,), "v")
    s = make_param(rng, (), "s")

    def loss():
        return tape.sum_(tape.mul(tape.add(a, v), tape.add(a, s)))

    check_grads(loss, [a, v, s])


def test_matmul_linear(rng):
    x = make_param(rng, (5, 4), "x")
    w = make_param(rng, (4, 3), "w")
    b = make_param(rng, (3,), "b")

    def loss():
        return tape.sum_(tape.square(tape.linear(x, w, b)))

    check_grads(loss, [x, w, b])


def test_matmul_batched(rng):
    a = make_param(rng, (6, 3, 3), "a")
    b = make_param(rng, (6, 3, 3), "b")

    def loss():
        return tape.sum_(tape.matmul(a, b))

    check_grads(loss, [a, b])


def test_reshape_transpose_concat_slice(rng):
    a = make_param(rng, (4, 6), "a")
    b = make_param(rng, (4, 2), "b")

    def loss():
        x = tape.concat([a, b], axis=1)           # [4, 8]
        x = tape.transpose(x)                     # [8, 4]
        x = tape.reshape(x, (2, 16))
        y = tape.slice_(x, (slice(None), slice(0, 10)))
        return tape.sum_(tape.square(y))

    check_grads(loss, [a, b])


def test_take_scatter_rows(rng):
    table = make_param(rng, (5, 3), "table")
    idx = np.array([1, 3, 1])  # repeated gather accumulates

    def loss():
        rows = tape.take_rows(table, idx)
        sc = tape.scatter_rows(rows, np.array([0, 2, 4]), 6)
        return tape.sum_(tape.square(sc))

    check_grads(loss, [table])


def test_sum_mean_axes(rng):
    a = make_param(rng, (3, 4, 2), "a")

    def loss():
        s1 = tape.sum_(a, axis=1)
        s2 = tape.mean_(a, axis=(0, 2))
        return tape.add(tape.sum_(tape.square(s1)), tape.sum_(tape.square(s2)))

    check_grads(loss, [a])


def test_sinusoid_encode_matches_scalar_oracle(rng):
    # independent oracle: evaluate each sinusoid with math ops, one at a time
    import math

    x = rng.standard_normal((5, 3))
    out = tape.sinusoid_encode(tape.as_tensor(x), bands=4).data
    for n in range(5):
        col = 0
        for k in range(4):
            for c in range(3):
                ang = (2.0 ** k) * math.pi * x[n, c]
                assert abs(out[n, col] - math.sin(ang)) < 1e-12
                assert abs(out[n, col + 1] - math.cos(ang)) < 1e-12
                col += 2

    p = tape.parameter(x.copy(), name="x")
    w = rng.standard_normal((5, 24))

    def loss():
        return tape.sum_(tape.mul(tape.sinusoid_encode(p, bands=4), w))

    check_grads(loss, [p])


def test_channel_softmax(rng):
    logits = make_param(rng, (4, 4, 4, 3), "logits")

    out = tape.channel_softmax(logits).data
    assert np.allclose(out.sum(axis=-1), 1.0)
    assert np.all(out > 0)

    w = rng.standard_normal((4, 4, 4, 3))

    def loss():
        return tape.sum_(tape.mul(tape.channel_softmax(logits), w))

    check_grads(loss, [logits])


class TestTrilinear:
    def grid_param(self, rng, res=4, nch=3):
        return tape.parameter(rng.standard_normal((res, res, res, nch)), name="grid")

    def test_node_and_center_values(self, rng):
        grid = self.grid_param(rng)
        bmin, bmax = np.zeros(3), np.ones(3) * 3.0
        # exactly at a node
        pt = np.array([[1.0, 2.0, 0.0]])
        v = tape.trilinear(grid, tape.as_tensor(pt), bmin, bmax).data[0]
        assert np.allclose(v, grid.data[1, 2, 0])
        # at a cell center: 8-corner average oracle
        pt = np.array([[0.5, 0.5, 0.5]])
        v = tape.trilinear(grid, tape.as_tensor(pt), bmin, bmax).data[0]
        oracle = grid.data[0:2, 0:2, 0:2].mean(axis=(0, 1, 2))
        assert np.allclose(v, oracle, atol=1e-12)

    def test_outside_returns_background(self, rng):
        grid = self.grid_param(rng)
        pts = np.array([[-0.5, 1.0, 1.0], [1.0, 1.0, 9.0]])
        v = tape.trilinear(grid, tape.as_tensor(pts), np.zeros(3), np.ones(3) * 3.0).data
        assert np.allclose(v[:, :-1], 0.0)
        assert np.allclose(v[:, -1], 1.0)
        vch = tape.trilinear(grid, tape.as_tensor(pts), np.zeros(3), np.ones(3) * 3.0, channel=0).data
        assert np.allclose(vch, 0.0)
        vbg = tape.trilinear(grid, tape.as_tensor(pts), np.zeros(3), np.ones(3) * 3.0, channel=2).data
        assert np.allclose(vbg, 1.0)

    def test_grad_wrt_grid_and_points(self, rng):
        grid = self.grid_param(rng)
        # keep FD probes away from cell faces where the slope is one-sided
        pts = tape.parameter(rng.uniform(0.3, 2.7, (6, 3)), name="pts")
        w = rng.standard_normal((6, 3))

        def loss():
            v = tape.trilinear(grid, pts, np.zeros(3), np.ones(3) * 3.0)
            return tape.sum_(tape.mul(v, w))

        check_grads(loss, [grid, pts], h=1e-5)

    def test_grad_single_channel(self, rng):
        grid = self.grid_param(rng)
        pts = tape.parameter(rng.uniform(0.3, 2.7, (5, 3)), name="pts")
        w = rng.standard_normal(5)

        def loss():
            v = tape.trilinear(grid, pts, np.zeros(3), np.ones(3) * 3.0, channel=1)
            return tape.sum_(tape.mul(v, w))

        check_grads(loss, [grid, pts], h=1e-5)

    def test_outside_points_get_zero_grad(self, rng):
        grid = self.grid_param(rng)
        pts = tape.parameter(np.array([[5.0, 5.0, 5.0]]), name="pts")
        v = tape.trilinear(grid, pts, np.zeros(3), np.ones(3) * 3.0, channel=0)
        tape.backward(tape.sum_(v))
        assert np.all(pts.grad == 0)
        assert grid.grad is None or np.all(grid.grad == 0)


def test_fast_kernel_path_matches_numpy_path(rng):
    if not tape.USE_FAST_KERNELS:
        pytest.skip("numba unavailable")
    grid = tape.parameter(rng.standard_normal((6, 5, 7, 3)).astype(np.float32), name="grid")
    pts = tape.parameter(rng.uniform(-0.3, 3.3, (200, 3)).astype(np.float32), name="pts")
    bmin, bmax = np.zeros(3), np.array([3.0, 2.0, 3.0])
    coef = rng.standard_normal(200).astype(np.float32)

    def run():
        out = tape.trilinear(grid, pts, bmin, bmax, channel=1)
        loss = tape.sum_(tape.mul(out, coef))
        grid.zero_grad()
        pts.zero_grad()
        tape.backward(loss)
        return out.data.copy(), grid.grad.copy(), pts.grad.copy()

    v_fast, gg_fast, gp_fast = run()
    tape.USE_FAST_KERNELS = False
    try:
        v_np, gg_np, gp_np = run()
    finally:
        tape.USE_FAST_KERNELS = True
    assert np.abs(v_fast - v_np).max() < 1e-5
    assert np.abs(gg_fast - gg_np).max() < 1e-4
    assert np.abs(gp_fast - gp_np).max() < 1e-3


class TestCompositingWeights:
    def test_matches_bruteforce(self, rng):
        n, g = 4, 6
        sigma = np.abs(rng.standard_normal((n, g)))
        fg = rng.uniform(0, 1, (n, g))
        dt = rng.uniform(0.1, 0.5, (n, g))
        w = tape.compositing_weights(tape.as_tensor(sigma), tape.as_tensor(fg), dt).data
        # brute force per ray
        for i in range(n):
            trans = 1.0
            for j in range(g):
                alpha = fg[i, j] * (1 - np.exp(-sigma[i, j] * dt[i, j]))
                assert abs(w[i, j] - trans * alpha) < 1e-12
                trans *= 1 - alpha

    def test_grads(self, rng):
        n, g = 3, 5
        sigma = tape.parameter(np.abs(rng.standard_normal((n, g))) + 0.1, name="sigma")
        fg = tape.parameter(rng.uniform(0.05, 0.95, (n, g)), name="fg")
        dt = rng.uniform(0.1, 0.5, (n, g))
        coef = rng.standard_normal((n, g))

        def loss():
            w = tape.compositing_weights(sigma, fg, dt)
            return tape.sum_(tape.mul(w, coef))

        check_grads(loss, [sigma, fg])


def test_backward_accumulates_and_barriers(rng):
    a = make_param(rng, (3,), "a")
    b = make_param(rng, (3,), "b")
    mid = tape.mul(a, b)
    loss1 = tape.sum_(tape.square(mid))
    loss2 = tape.sum_(tape.mul(mid, 2.0))

    tape.backward(loss1)
    g1 = a.grad.copy()
    tape.backward(loss2)  # accumulates on top
    assert np.allclose(a.grad, g1 + 2.0 * b.data)

    # a barrier at mid blocks flow into both leaves
    a.zero_grad()
    b.zero_grad()
    mid2 = tape.mul(a, b)
    loss3 = tape.sum_(tape.square(mid2))
    tape.backward(loss3, barriers=[mid2])
    assert a.grad is None and b.grad is None


def test_barrier_keeps_other_paths(rng):
    a = make_param(rng, (3,), "a")
    blocked = tape.square(a)
    open_path = tape.mul(a, 3.0)
    loss = tape.sum_(tape.add(blocked, open_path))
    tape.backward(loss, barriers=[blocked])
    assert np.allclose(a.grad, 3.0)


def test_stop_gradient(rng):
    a = make_param(rng, (3,), "a")
    loss = tape.sum_(tape.mul(tape.stop_gradient(tape.square(a)), a))
    tape.backward(loss)
    assert np.allclose(a.grad, a.data ** 2)  # only the open factor contributes


def test_unused_parameter_gets_no_grad(rng):
    a = make_param(rng, (3,), "a")
    unused = make_param(rng, (3,), "unused")
    tape.backward(tape.sum_(tape.square(a)))
    assert a.grad is not None
    assert unused.grad is None


def test_float32_pipeline_tolerance(rng):
    a = tape.parameter(rng.standard_normal((4, 4)).astype(np.float32), name="a")
    w = tape.parameter((rng.standard_normal((4, 2)) * 0.5).astype(np.float32), name="w")

    def loss():
        return tape.sum_(tape.square(tape.sigmoid(tape.matmul(a, w))))

    check_grads(loss, [a, w], dtype=np.float32)


def test_dtype_preserved_through_ops(rng):
    a = tape.as_tensor(rng.standard_normal((4, 3)).astype(np.float32))
    out = tape.sinusoid_encode(tape.mul(tape.add(a, 0.5), 2.0), bands=3)
    assert out.data.dtype == np.float32


def test_backward_rejects_nonscalar(rng):
    a = make_param(rng, (3,), "a")
    with pytest.raises(ValueError):
        tape.backward(tape.square(a))
