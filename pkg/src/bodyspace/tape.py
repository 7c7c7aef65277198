"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced. Running a
forward computation through the ops below records a DAG; `backward` walks it
in reverse topological order and accumulates vector-Jacobian products into
the `.grad` of every reachable leaf that has `requires_grad=True`.

The op set is deliberately coarse: besides elementwise math it includes the
fused kernels this project actually spends time in (linear layers, sinusoidal
encoding, trilinear grid sampling, volume compositing weights), each with a
hand-written VJP. Every VJP is validated against central finite differences
in the test suite.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "vjp", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.vjp = None  # callable(out_grad) -> tuple of parent grads
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = self.name or "tensor"
        return f"<{tag} shape={self.data.shape} grad={self.requires_grad}>"

    # Convenience operators; all defer to module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)


def parameter(data, name=None):
    """Leaf tensor that collects gradients."""
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        if dtype is not None and x.data.dtype != dtype:
            raise TypeError(f"tensor dtype {x.data.dtype} != requested {dtype}")
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _node(data, parents, vjp):
    parents = tuple(p for p in parents)
    rg = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=rg)
    if rg:
        out.parents = parents
        out.vjp = vjp
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic

# Python scalars stay scalars (not 0-d float64 arrays) so float32 graphs are
# not silently promoted.


def _is_scalar(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def add(a, b):
    if _is_scalar(b):
        a = as_tensor(a)
        return _node(a.data + b, (a,), lambda g: (g,))
    if _is_scalar(a):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b):
    if _is_scalar(b):
        return add(a, -b)
    if _is_scalar(a):
        b = as_tensor(b)
        return _node(a - b.data, (b,), lambda g: (-g,))
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b):
    if _is_scalar(b):
        a = as_tensor(a)
        return _node(a.data * b, (a,), lambda g: (g * b,))
    if _is_scalar(a):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def div(a, b):
    if _is_scalar(b):
        return mul(a, 1.0 / b)
    if _is_scalar(a):
        b = as_tensor(b)
        return _node(a / b.data, (b,), lambda g: (-g * a / (b.data * b.data),))
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    def vjp(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb
    return _node(out, (a, b), vjp)


def neg(a):
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def pow_const(a, p):
    a = as_tensor(a)
    out = a.data ** p
    return _node(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def square(a):
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (g * 2.0 * a.data,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def sin(a):
    a = as_tensor(a)
    return _node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    a = as_tensor(a)
    return _node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def absval(a):
    a = as_tensor(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def softplus(a):
    """log(1 + exp(x)), computed stably; gradient is sigmoid(x)."""
    a = as_tensor(a)
    x = a.data
    out = (np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0)).astype(x.dtype, copy=False)
    def vjp(g):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return (g * s.astype(x.dtype, copy=False),)
    return _node(out, (a,), vjp)


def sigmoid(a):
    a = as_tensor(a)
    # numerically stable split on sign
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = out.astype(x.dtype, copy=False)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


# ---------------------------------------------------------------------------
# shape / indexing


def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))
    return _node(data, ts, vjp)


def slice_(a, idx):
    """Basic (non-fancy) indexing: slices, ints, ellipsis."""
    a = as_tensor(a)
    out = a.data[idx]
    shape = a.data.shape
    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)
    return _node(out, (a,), vjp)


def take_rows(a, indices):
    """Gather rows along axis 0; indices may repeat."""
    a = as_tensor(a)
    indices = np.asarray(indices)
    out = a.data[indices]
    shape = a.data.shape
    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, indices, g)
        return (full,)
    return _node(out, (a,), vjp)


def scatter_rows(values, indices, length):
    """Place `values[i]` at row `indices[i]` of a zero array; indices must be unique."""
    values = as_tensor(values)
    indices = np.asarray(indices)
    out_shape = (length,) + values.data.shape[1:]
    out = np.zeros(out_shape, dtype=values.data.dtype)
    out[indices] = values.data
    return _node(out, (values,), lambda g: (g[indices],))


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(g.dtype, copy=False).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        ax = tuple(x % len(shape) for x in ax)
        if not keepdims:
            for x in sorted(ax):
                g = np.expand_dims(g, x)
        return (np.broadcast_to(g, shape).copy(),)
    return _node(out, (a,), vjp)


def mean_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[x] for x in ax]))
    s = sum_(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / count)


def stop_gradient(a):
    a = as_tensor(a)
    return Tensor(a.data)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data
    def vjp(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 2:
            ga = g @ bd.T
            gb = np.outer(ad, g)
        elif ad.ndim == 2 and bd.ndim == 1:
            ga = np.outer(g, bd)
            gb = ad.T @ g
        else:
            ga = g @ np.swapaxes(bd, -1, -2)
            gb = np.swapaxes(ad, -1, -2) @ g
            ga = _unbroadcast(ga, ad.shape)
            gb = _unbroadcast(gb, bd.shape)
        return ga, gb
    return _node(out, (a, b), vjp)


def linear(x, w, b=None):
    """x @ w (+ b). Row batch in x, weights [in, out]."""
    x, w = as_tensor(x), as_tensor(w)
    out = x.data @ w.data
    if b is None:
        def vjp2(g):
            return g @ w.data.T, x.data.T @ g
        return _node(out, (x, w), vjp2)
    b = as_tensor(b)
    np.add(out, b.data, out=out)
    def vjp3(g):
        return g @ w.data.T, x.data.T @ g, _unbroadcast(g, b.data.shape)
    return _node(out, (x, w, b), vjp3)


# ---------------------------------------------------------------------------
# fused domain kernels


def sinusoid_encode(x, bands):
    """Per point: for each band k and coordinate c, the pair
    (sin(2^k pi c), cos(2^k pi c)). Output [N, 2 * dims * bands]."""
    x = as_tensor(x)
    xd = x.data
    n, d = xd.shape
    freqs = (2.0 ** np.arange(bands)) * np.pi  # [bands]
    ang = xd[:, None, :] * freqs[None, :, None].astype(xd.dtype)  # [N, bands, d]
    s, c = np.sin(ang), np.cos(ang)
    out = np.stack([s, c], axis=-1).reshape(n, bands * d * 2).astype(xd.dtype, copy=False)
    def vjp(g):
        gp = g.reshape(n, bands, d, 2)
        dang = gp[..., 0] * c - gp[..., 1] * s
        return ((dang * freqs[None, :, None]).sum(axis=1).astype(xd.dtype, copy=False),)
    return _node(out, (x,), vjp)


def channel_softmax(logits):
    """Softmax over the last axis."""
    logits = as_tensor(logits)
    z = logits.data
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    out = e / e.sum(axis=-1, keepdims=True)
    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)
    return _node(out, (logits,), vjp)


_CORNERS = np.array([(bx, by, bz) for bx in (0, 1) for by in (0, 1) for bz in (0, 1)])

try:
    from . import _kernels

    USE_FAST_KERNELS = _kernels.HAVE_NUMBA
except ImportError:  # pragma: no cover
    _kernels = None
    USE_FAST_KERNELS = False


def _trilinear_fast(grid, pts, box_min, box_max, channel):
    """Single-channel trilinear sampling through the numba kernels; same
    contract as the numpy path below (values agree to float tolerance)."""
    gd, pd = grid.data, pts.data
    nch = gd.shape[3]
    dtype = gd.dtype
    grid_ch = np.ascontiguousarray(gd[..., channel])
    pview = np.ascontiguousarray(pd)
    bmin = np.asarray(box_min, dtype=dtype)
    extent = np.asarray(box_max, dtype=dtype) - bmin
    fill = 1.0 if channel == nch - 1 else 0.0
    vals, _ = _kernels.trilinear_channel_fwd(grid_ch, pview, bmin, extent, fill)

    def vjp(g):
        ggrid_ch, gpts = _kernels.trilinear_channel_bwd(
            grid_ch, pview, bmin, extent, np.ascontiguousarray(g),
            grid.requires_grad, pts.requires_grad)
        ggrid = None
        if grid.requires_grad:
            ggrid = np.zeros_like(gd)
            ggrid[..., channel] = ggrid_ch
        return ggrid, (gpts if pts.requires_grad else None)

    return _node(vals, (grid, pts), vjp)


def trilinear(grid, pts, box_min, box_max, channel=None):
    """Trilinearly sample a [X, Y, Z, C] grid at world points [N, 3].

    Grid nodes span the box inclusively. Points outside the box get the
    out-of-volume value: 0 on every channel except the last, which gets 1
    (background convention). Differentiable in both the grid values and the
    point locations; the positional derivative is the piecewise-constant
    slope of the interpolant.
    """
    grid, pts = as_tensor(grid), as_tensor(pts)
    if channel is not None and USE_FAST_KERNELS and \
            grid.data.dtype in (np.float32, np.float64):
        return _trilinear_fast(grid, pts, box_min, box_max, channel)
    gd, pd = grid.data, pts.data
    res = np.array(gd.shape[:3])
    nch = gd.shape[3]
    n = pd.shape[0]
    bmin = np.asarray(box_min, dtype=pd.dtype)
    bmax = np.asarray(box_max, dtype=pd.dtype)
    extent = bmax - bmin
    inside = np.all((pd >= bmin) & (pd <= bmax), axis=1)

    u = (pd - bmin) / extent * (res - 1)  # grid coords
    i0 = np.clip(u.astype(np.int64), 0, res - 2)
    frac = (u - i0).astype(pd.dtype)

    # per corner: blend weight [8, N], flat node index [8, N]
    cf = _CORNERS[:, None, :]
    wts = np.prod(np.where(cf == 1, frac[None], 1.0 - frac[None]), axis=2)
    idx = i0[None] + cf
    lin = (idx[..., 0] * res[1] + idx[..., 1]) * res[2] + idx[..., 2]

    if channel is None:
        cv = gd.reshape(-1, nch)[lin]  # [8, N, C]
        vals = (cv * wts[..., None]).sum(axis=0)
        vals[~inside] = 0.0
        vals[~inside, nch - 1] = 1.0
    else:
        cv = gd.reshape(-1, nch)[..., channel][lin]  # [8, N]
        vals = (cv * wts).sum(axis=0)
        vals[~inside] = 1.0 if channel == nch - 1 else 0.0

    scale = ((res - 1) / extent).astype(pd.dtype)

    def scatter_nodes(target_1d, values):
        # bincount accumulates in float64; wider dtypes go the slow exact
        # route (extended-precision gradient checks use them)
        if values.dtype in (np.float32, np.float64):
            target_1d += np.bincount(lin.ravel(), weights=values.ravel(),
                                     minlength=target_1d.shape[0])
        else:
            np.add.at(target_1d, lin.ravel(), values.ravel())

    def vjp(g):
        gmask = inside.astype(pd.dtype)
        ggrid = gpts = None
        if channel is None:
            gv = g * gmask[:, None]  # [N, C]
            if grid.requires_grad:
                ggrid = np.zeros_like(gd)
                flat = ggrid.reshape(-1, nch)
                contrib = gv[None] * wts[..., None]  # [8, N, C]
                for cidx in range(nch):
                    scatter_nodes(flat[:, cidx], contrib[..., cidx])
            gdot = (gv[None] * cv).sum(axis=2)  # [8, N]
        else:
            gv = g * gmask  # [N]
            if grid.requires_grad:
                ggrid = np.zeros_like(gd)
                flat = ggrid.reshape(-1, nch)
                scatter_nodes(flat[:, channel], gv[None] * wts)
            gdot = gv[None] * cv  # [8, N]
        if pts.requires_grad:
            gpts = np.empty_like(pd)
            for ax in range(3):
                other = [a for a in range(3) if a != ax]
                wother = np.prod(
                    np.where(cf[..., other] == 1, frac[None][..., other], 1.0 - frac[None][..., other]),
                    axis=2,
                )
                sgn = np.where(cf[..., ax] == 1, 1.0, -1.0)
                gpts[:, ax] = (gdot * sgn * wother).sum(axis=0) * scale[ax]
        return ggrid, gpts

    return _node(vals, (grid, pts), vjp)


def compositing_weights(sigma, fg, dt):
    """Volume-rendering weights w_i = prod_{j<i}(1 - a_j) * a_i with
    a_i = fg_i * (1 - exp(-sigma_i * dt_i)). Shapes [N, G]."""
    sigma, fg = as_tensor(sigma), as_tensor(fg)
    dtv = np.asarray(dt, dtype=sigma.data.dtype)
    att = np.exp(-sigma.data * dtv)
    alpha = fg.data * (1.0 - att)
    one_m = 1.0 - alpha
    texc = np.cumprod(one_m, axis=1)
    texc = np.concatenate([np.ones_like(texc[:, :1]), texc[:, :-1]], axis=1)
    w = texc * alpha

    def vjp(g):
        s = w * g
        # B_k = sum_{i > k} w_i g_i  (exclusive suffix sum)
        rev = np.cumsum(s[:, ::-1], axis=1)[:, ::-1]
        suffix = rev - s
        denom = np.maximum(one_m, np.asarray(1e-12, dtype=one_m.dtype))
        dalpha = texc * g - suffix / denom
        dsigma = dalpha * fg.data * dtv * att
        dfg = dalpha * (1.0 - att)
        return dsigma.astype(sigma.data.dtype, copy=False), dfg.astype(fg.data.dtype, copy=False)

    return _node(w, (sigma, fg), vjp)


# ---------------------------------------------------------------------------
# backward


def backward(root, barriers=()):
    """Accumulate gradients of scalar `root` into every reachable leaf.

    `barriers` is an iterable of Tensors treated as constants for this pass:
    gradient arriving there is dropped and their ancestors are not visited.
    Calling backward twice adds into existing `.grad` buffers (used for
    per-loss gradient routing).
    """
    if root.data.size != 1:
        raise ValueError("backward expects a scalar root")
    barrier_ids = {id(t) for t in barriers}

    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        nid = id(node)
        if nid in visited:
            continue
        visited.add(nid)
        stack.append((node, True))
        if nid not in barrier_ids:
            for p in node.parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(topo):
        nid = id(node)
        g = grads.pop(nid, None)
        if g is None:
            continue
        if nid in barrier_ids:
            continue
        if node.vjp is not None:
            parent_grads = node.vjp(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                pid = id(p)
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        elif node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g.reshape(node.data.shape)
