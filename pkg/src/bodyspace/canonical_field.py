"""Appearance-conditioned canonical volume and the embedding tables.

The field is an 8-layer ReLU MLP. Input is the sinusoidal encoding of the
canonical position concatenated with the appearance embedding; a skip
connection re-injects both at the fifth layer. Heads: rectified density,
sigmoid color. Concatenation with a per-frame-constant embedding is
implemented as separate weight blocks (algebraically identical, and the
embedding contribution is a rank-one update shared by the whole batch).
"""

from __future__ import annotations

import numpy as np

from . import tape
from .geometry import Aabb

APP_EMBED_DIM = 256


class CanonicalNet:
    def __init__(self, rng: np.random.Generator, box: Aabb, width: int = 256, depth: int = 8,
                 skip_layer: int = 5, bands: int = 10, embed_dim: int = APP_EMBED_DIM,
                 dtype=np.float32, density_scale: float = 1.0,
                 density_activation: str = "relu", density_prior=None):
        if not (1 < skip_layer <= depth):
            raise ValueError("skip layer must fall inside the stack")
        if density_activation not in ("relu", "softplus"):
            raise ValueError(f"unknown density activation {density_activation!r}")
        self.width = width
        self.depth = depth
        self.skip_layer = skip_layer
        self.bands = bands
        self.embed_dim = embed_dim
        self.enc_dim = 6 * bands
        # fixed unit conversion on the rectified density head; opaque surfaces
        # need sigma of order 1/sample-spacing, far above the head's init range
        self.density_scale = density_scale
        # relu matches the reference architecture; softplus is the desk-scale
        # alternative whose gradient cannot die globally under the early
        # carve-to-black pressure of flat black backgrounds
        self.density_activation = density_activation
        # optional shape prior: a fixed bias field added to the density head
        # pre-activation (callable [N, 3] -> [N]), so geometry starts at the
        # rig's canonical support instead of a saddle where an all-black,
        # all-transparent field has mutually vanishing color/density grads
        self.density_prior = density_prior
        # normalize query points to [-1, 1]^3 over the canonical box before
        # encoding so the sinusoid bands cover the subject at every scale
        self.center = box.center.astype(np.float64)
        self.half = (0.5 * (box.hi - box.lo)).astype(np.float64)
        self.params = {}

        def he(shape, fan_in, scale=1.0):
            return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in) * scale).astype(dtype)

        for li in range(depth):
            name = f"field.w{li}"
            if li == 0:
                self.params[name] = tape.parameter(he((self.enc_dim, width), self.enc_dim), name=name)
                self.params["field.we0"] = tape.parameter(
                    he((embed_dim, width), embed_dim), name="field.we0")
            elif li == skip_layer - 1:
                self.params[name] = tape.parameter(he((width, width), width + self.enc_dim), name=name)
                self.params["field.wx_skip"] = tape.parameter(
                    he((self.enc_dim, width), width + self.enc_dim), name="field.wx_skip")
                self.params["field.we_skip"] = tape.parameter(
                    he((embed_dim, width), embed_dim), name="field.we_skip")
            else:
                self.params[name] = tape.parameter(he((width, width), width), name=name)
            self.params[f"field.b{li}"] = tape.parameter(np.zeros(width, dtype=dtype), name=f"field.b{li}")
        self.params["field.w_sigma"] = tape.parameter(he((width, 1), width, 0.1), name="field.w_sigma")
        self.params["field.b_sigma"] = tape.parameter(np.zeros(1, dtype=dtype), name="field.b_sigma")
        self.params["field.w_rgb"] = tape.parameter(he((width, 3), width, 0.1), name="field.w_rgb")
        self.params["field.b_rgb"] = tape.parameter(np.zeros(3, dtype=dtype), name="field.b_rgb")

    def param_list(self):
        return list(self.params.values())

    def query_t(self, x, app_embed):
        """Tape forward pass. x: [N, 3] canonical points; app_embed: [E].
        Returns (rgb [N, 3] in (0,1), sigma [N] >= 0)."""
        x = tape.as_tensor(x)
        dtype = x.data.dtype
        xn = tape.mul(tape.sub(x, self.center.astype(dtype)), (1.0 / self.half).astype(dtype))
        enc = tape.sinusoid_encode(xn, self.bands)
        emb = tape.reshape(tape.as_tensor(app_embed, dtype=dtype), (1, self.embed_dim))
        e0 = tape.matmul(emb, self.params["field.we0"])  # [1, W], broadcast below
        h = tape.relu(tape.add(tape.linear(enc, self.params["field.w0"], self.params["field.b0"]), e0))
        for li in range(1, self.depth):
            z = tape.linear(h, self.params[f"field.w{li}"], self.params[f"field.b{li}"])
            if li == self.skip_layer - 1:
                z = tape.add(z, tape.matmul(enc, self.params["field.wx_skip"]))
                z = tape.add(z, tape.matmul(emb, self.params["field.we_skip"]))
            h = tape.relu(z)
        z_sigma = tape.reshape(
            tape.linear(h, self.params["field.w_sigma"], self.params["field.b_sigma"]), (-1,))
        if self.density_prior is not None:
            z_sigma = tape.add(z_sigma, self.density_prior.op(x))
        rect = tape.softplus if self.density_activation == "softplus" else tape.relu
        sigma = rect(z_sigma)
        if self.density_scale != 1.0:
            sigma = tape.mul(sigma, float(self.density_scale))
        rgb = tape.sigmoid(tape.linear(h, self.params["field.w_rgb"], self.params["field.b_rgb"]))
        return rgb, sigma

    def query(self, x, app_embed):
        """Plain forward pass on arrays; accepts [N, 3] or a single 3-vector."""
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        dtype = self.params["field.w0"].data.dtype
        emb = np.asarray(app_embed, dtype=dtype)
        if emb.shape != (self.embed_dim,):
            raise ValueError(f"appearance embedding must have length {self.embed_dim}")
        rgb, sigma = self.query_t(tape.as_tensor(np.atleast_2d(arr).astype(dtype)), emb)
        if single:
            return rgb.data[0], float(sigma.data[0])
        return rgb.data, sigma.data


def query_field(net: CanonicalNet, x_can, app_embed):
    """(color, density) at one canonical point."""
    return net.query(np.asarray(x_can).reshape(3), app_embed)


class CapsulePrior:
    """Density-head bias field from the rig's rest capsules.

    Positive inside each capsule (peak `gain` on the axis), zero at the
    surface, clipped at -clip far away, taking the most favorable bone at
    each point. Mirrors the motion-weight volume's bone-aligned
    initialization. The field depends on position, so it participates in the
    tape: d(value)/dx = -2 gain / r^2 * (x - closest segment point) for the
    winning bone, zero where the lower clip is active."""

    def __init__(self, rig, gain: float = 2.0, clip: float = 12.0):
        self.rig = rig
        self.gain = float(gain)
        self.clip = float(clip)

    def _forward(self, points):
        points = np.atleast_2d(points)
        n = points.shape[0]
        best = np.full(n, -np.inf)
        best_diff = np.zeros((n, 3), dtype=points.dtype)
        best_r2 = np.ones(n)
        for i in range(self.rig.bone_count):
            h = self.rig.rest_head[i].astype(points.dtype)
            t = self.rig.rest_tail[i].astype(points.dtype)
            axis = t - h
            s = np.clip(((points - h) @ axis) / float(axis @ axis), 0.0, 1.0)
            diff = points - (h + s[:, None] * axis)
            r2 = float(self.rig.bone_radius[i]) ** 2
            v = self.gain * (1.0 - (diff * diff).sum(axis=1) / r2)
            better = v > best
            best[better] = v[better]
            best_diff[better] = diff[better]
            best_r2[better] = r2
        vals = np.clip(best, -self.clip, self.gain)
        grad = np.where((best > -self.clip)[:, None],
                        (-2.0 * self.gain / best_r2)[:, None] * best_diff, 0.0)
        return vals.astype(points.dtype), grad.astype(points.dtype)

    def __call__(self, points) -> np.ndarray:
        return self._forward(np.asarray(points, dtype=np.float64))[0]

    def op(self, x) -> tape.Tensor:
        """Tape node: [N, 3] positions -> [N] bias values."""
        x = tape.as_tensor(x)
        vals, grad = self._forward(x.data)
        return tape._node(vals, (x,), lambda g: (g[:, None] * grad,))


def capsule_density_prior(rig, gain: float = 2.0, clip: float = 12.0) -> CapsulePrior:
    return CapsulePrior(rig, gain, clip)


class EmbeddingTables:
    """Per-appearance-set latent vectors, optimized with everything else."""

    def __init__(self, sets: int, rng: np.random.Generator, app_dim: int = APP_EMBED_DIM,
                 pose_dim: int = 16, init_std: float = 0.01, dtype=np.float32):
        if sets < 1:
            raise ValueError("need at least one appearance set")
        self.sets = sets
        self.app = tape.parameter((rng.standard_normal((sets, app_dim)) * init_std).astype(dtype),
                                  name="embed.app")
        self.pose = tape.parameter((rng.standard_normal((sets, pose_dim)) * init_std).astype(dtype),
                                   name="embed.pose")

    def param_list(self):
        return [self.app, self.pose]

    def _check(self, index: int):
        if not (0 <= index < self.sets):
            raise IndexError(f"appearance set {index} out of range [0, {self.sets})")

    def lookup_t(self, appearance_index: int, pose_index: int):
        """Tape row views (gradients flow into the tables)."""
        self._check(appearance_index)
        self._check(pose_index)
        app = tape.reshape(tape.take_rows(self.app, np.array([appearance_index])), (-1,))
        pose = tape.reshape(tape.take_rows(self.pose, np.array([pose_index])), (-1,))
        return app, pose


def lookup_embeddings(tables: EmbeddingTables, appearance_index: int, pose_index: int):
    """Stored (appearance, pose) vectors as arrays."""
    app, pose = tables.lookup_t(appearance_index, pose_index)
    return app.data.copy(), pose.data.copy()
