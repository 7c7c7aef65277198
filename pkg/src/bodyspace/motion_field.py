"""Shared canonical motion weight volume and the observation->canonical warp.

A single (K+1)-channel grid of logits lives on the canonical bounding box;
channel k < K is bone k's skinning weight, the last channel is background.
Sampling softmaxes the channels so weights are positive and sum to one at
every grid node, a property trilinear interpolation preserves at any
continuous point. Points outside the box are pure background.

The logits are optimized directly (trilinear interpolation at this
resolution already acts as a smoothness prior), initialized from a
capsule-distance falloff around each rest bone so early renders are
non-degenerate.
"""

from __future__ import annotations

import numpy as np

from . import tape
from .geometry import Aabb
from .skeleton import SkeletonRig

DEFAULT_RESOLUTION = 32
DEFAULT_BOX_INFLATE = 1.5
FG_LOGIT_GAIN = 2.0

# samples whose foreground likelihood falls below this are treated as empty;
# their alpha contribution is below float32 compositing resolution, and the
# guard keeps the blend division away from underflow
LIVE_EPS = 1e-6


def segment_distances(points, head, tail):
    """Distance from each point [N, 3] to the segment (head, tail)."""
    points = np.atleast_2d(points)
    d = tail - head
    len2 = float(d @ d)
    t = np.clip(((points - head) @ d) / len2, 0.0, 1.0)
    closest = head + t[:, None] * d
    return np.linalg.norm(points - closest, axis=1)


class MotionWeightVolume:
    """Grid of (K+1)-channel logits over an axis-aligned canonical box."""

    def __init__(self, logits, box: Aabb):
        logits = np.asarray(logits)
        if logits.ndim != 4:
            raise ValueError("logits must be [X, Y, Z, K+1]")
        self.logits = logits if isinstance(logits, tape.Tensor) else tape.parameter(logits, name="volume.logits")
        self.box = box
        self._weights_cache = None

    @property
    def bone_count(self) -> int:
        return self.logits.data.shape[3] - 1

    @property
    def resolution(self):
        return self.logits.data.shape[:3]

    @staticmethod
    def from_rig(rig: SkeletonRig, resolution: int = DEFAULT_RESOLUTION,
                 inflate: float = DEFAULT_BOX_INFLATE, dtype=np.float32,
                 fg_gain: float = FG_LOGIT_GAIN) -> "MotionWeightVolume":
        """Initialize foreground logits from a capsule falloff around each
        rest bone (scale = bone radius); background logit is zero."""
        box = rig.rest_aabb(inflate)
        k = rig.bone_count
        axes = [np.linspace(box.lo[a], box.hi[a], resolution) for a in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
        logits = np.zeros((nodes.shape[0], k + 1))
        for i in range(k):
            d = segment_distances(nodes, rig.rest_head[i], rig.rest_tail[i])
            logits[:, i] = fg_gain * (1.0 - (d / rig.bone_radius[i]) ** 2)
        vol = MotionWeightVolume(
            logits.reshape(resolution, resolution, resolution, k + 1).astype(dtype), box)
        return vol

    def weights_t(self) -> tape.Tensor:
        """Channel-softmaxed grid as a tape tensor (one node per call site)."""
        return tape.channel_softmax(self.logits)

    def sample_weights(self, points) -> np.ndarray:
        """Softmaxed (K+1)-vector at each point [N, 3]; background = 1 outside."""
        dtype = self.logits.data.dtype
        pts = tape.as_tensor(np.atleast_2d(np.asarray(points)).astype(dtype))
        out = tape.trilinear(self.weights_t().detach(), pts, self.box.lo.astype(dtype),
                             self.box.hi.astype(dtype))
        return out.data


def sample_weights(vol: MotionWeightVolume, x) -> np.ndarray:
    """Weight vector at a single point."""
    return vol.sample_weights(np.asarray(x).reshape(1, 3))[0]


def warp_points_t(weights_grid, box: Aabb, bases, x_obs):
    """Differentiable observation->canonical warp for a point batch.

    weights_grid: softmaxed [X, Y, Z, K+1] tape tensor.
    bases: per-bone (rotation [3,3], translation [3]) tape tensors.
    x_obs: constant [N, 3] tensor of observed points.

    Returns (x_can [N, 3], fg [N]): the blended canonical positions (defined
    where fg > 0; equal to x_obs elsewhere, by convention those samples are
    empty) and the foreground likelihood fg = sum_k w_c^k(y_k).
    """
    x_obs = tape.as_tensor(x_obs)
    dtype = x_obs.data.dtype
    bmin = box.lo.astype(dtype)
    bmax = box.hi.astype(dtype)
    k = weights_grid.data.shape[3] - 1
    fg = None
    blend = None
    for i in range(k):
        r, t = bases[i]
        y = tape.add(tape.matmul(x_obs, tape.transpose(r)), t)  # [N, 3]
        w = tape.trilinear(weights_grid, y, bmin, bmax, channel=i)  # [N]
        fg = w if fg is None else tape.add(fg, w)
        contrib = tape.mul(tape.reshape(w, (-1, 1)), y)
        blend = contrib if blend is None else tape.add(blend, contrib)
    # normalize where fg is meaningfully positive; a dead sample either has
    # zero fg with zero gradient (all candidates outside the box) or an fg
    # too small to matter, so bumping its denominator to 1 keeps the division
    # finite without touching any meaningful grad
    live = fg.data > LIVE_EPS
    dead = (~live).astype(dtype)
    denom = tape.add(fg, tape.as_tensor(dead))
    x_can = tape.div(blend, tape.reshape(denom, (-1, 1)))
    return x_can, fg, live


def warp_to_canonical(vol: MotionWeightVolume, bases, x_obs):
    """Plain warp of points [N, 3] (or a single 3-vector).

    Returns (x_can, fg). Empty samples (fg == 0) return x_can = x_obs.
    """
    from .skeleton import bases_from_transforms

    x = np.atleast_2d(np.asarray(x_obs, dtype=np.float64))
    single = np.asarray(x_obs).ndim == 1
    dtype = vol.logits.data.dtype
    grid = vol.weights_t().detach()
    bt = bases_from_transforms(bases, dtype=dtype)
    x_can, fg, live = warp_points_t(grid, vol.box, bt, tape.as_tensor(x.astype(dtype)))
    out = np.where(live[:, None], x_can.data, x.astype(dtype))
    f = fg.data
    if single:
        return out[0], float(f[0])
    return out, f
