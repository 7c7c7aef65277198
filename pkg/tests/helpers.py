"""Shared test oracles.

The gradient checker here is the independent reference for every analytic
VJP in the package: central finite differences evaluated through the plain
forward pass, never through the tape's backward machinery.
"""

import numpy as np

from bodyspace import tape


def numeric_grad(fn, param, h=None):
    """Central-difference gradient of scalar fn() wrt one parameter tensor.

    fn must recompute the forward pass from param.data on every call.
    """
    x = param.data
    if h is None:
        h = 1e-5 if x.dtype == np.float64 else 1e-2
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn())
        flat[i] = orig - h
        fm = float(fn())
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.max(np.abs(a - b) / denom)


def check_grads_f32_against_f64(build_loss, params, tol=1e-3):
    """Validate a float32 gradient path against its float64 twin.

    Plain finite differences are unusable at float32 around ReLU kinks (the
    probe step crosses activation boundaries), so the float64 analytic
    gradient (itself FD-validated everywhere in this suite) is the reference:
    params are cast in place, the same graph is rebuilt, and the float32
    grads must match to 1e-3 relative.
    """
    f32 = {id(p): p.data for p in params}
    for p in params:
        p.zero_grad()
        p.data = p.data.astype(np.float64)
    loss64 = build_loss()
    tape.backward(loss64)
    ref = {id(p): p.grad.copy() for p in params}
    for p in params:
        p.data = f32[id(p)]
        p.zero_grad()
    loss32 = build_loss()
    assert loss32.data.dtype == np.float32
    tape.backward(loss32)
    worst = 0.0
    for p in params:
        err = rel_err(p.grad, ref[id(p)], floor=1e-1)
        assert err <= tol, f"float32 grad drift on {p.name}: rel err {err:.3e} > {tol}"
        worst = max(worst, err)
    return worst


def check_grads(build_loss, params, dtype=np.float64, tol=None, h=None):
    """Assert analytic grads match finite differences for every param.

    build_loss() constructs the graph from current param data and returns the
    scalar loss tensor. Returns the worst relative error seen.
    """
    if tol is None:
        tol = 1e-6 if dtype == np.float64 else 1e-3
    floor = 1e-3 if dtype == np.float64 else 1e-1
    for p in params:
        p.zero_grad()
    loss = build_loss()
    tape.backward(loss)
    worst = 0.0
    for p in params:
        assert p.grad is not None, f"no grad reached {p.name}"
        num = numeric_grad(lambda: build_loss().data, p, h=h)
        err = rel_err(p.grad, num, floor)
        assert err <= tol, f"grad mismatch on {p.name}: rel err {err:.3e} > {tol}"
        worst = max(worst, err)
    return worst
