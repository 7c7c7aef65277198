"""Differentiable volume rendering: stratified ray sampling, patch-based ray
selection, and front-to-back compositing of color, expected depth, and alpha.

Compositing follows w_i = prod_{j<i}(1 - a_j) * a_i with
a_i = f(x_i) * (1 - exp(-sigma(x_i) dt_i)); a pixel's color, depth, and alpha
are the w-weighted sums of sample colors, sample depths, and ones. Rays that
miss the subject box render exactly (0, 0, 0) with zero alpha and depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .geometry import Aabb, Camera, projected_bbox_2d, rays_for_pixels
from .motion_field import MotionWeightVolume, warp_points_t

SAMPLES_PER_RAY = 128
SEEN_PATCHES = 6
SEEN_PATCH_SIZE = 32
UNSEEN_PATCHES = 16
UNSEEN_PATCH_SIZE = 8
SUBJECT_BOX_INFLATE = 1.25


@dataclass(frozen=True)
class PatchSpec:
    frame_index: int
    x0: int
    y0: int
    size: int
    kind: str  # "seen" | "unseen"


@dataclass
class RenderedPatch:
    color: np.ndarray  # [H, W, 3]
    depth: np.ndarray  # [H, W]
    alpha: np.ndarray  # [H, W]


@dataclass
class Scene:
    """Everything a render needs: the field, the shared motion volume, the
    per-bone observation->canonical bases (tape pairs), and one appearance
    embedding. Bone counts must agree between volume and bases."""

    field: object  # exposes query_t(x, app_embed) -> (rgb, sigma)
    volume: MotionWeightVolume
    bases: list
    app_embed: object

    def __post_init__(self):
        if len(self.bases) != self.volume.bone_count:
            raise ValueError(
                f"scene has {len(self.bases)} bases but the volume stores "
                f"{self.volume.bone_count} bone channels")


def stratified_samples(t_near, t_far, count, rng=None, dtype=np.float64):
    """Sample positions and intervals for a ray batch.

    One sample per uniform bin over [t_near, t_far); jittered inside the bin
    when rng is given, at bin centers otherwise. dt_i = t_{i+1} - t_i for
    i < G and the uniform bin width for the final sample.
    """
    t_near = np.atleast_1d(np.asarray(t_near, dtype=np.float64))
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    n = t_near.shape[0]
    width = (t_far - t_near) / count  # [N]
    if rng is None:
        offsets = np.full((n, count), 0.5)
    else:
        offsets = rng.random((n, count))
    t = t_near[:, None] + (np.arange(count)[None, :] + offsets) * width[:, None]
    dt = np.empty_like(t)
    dt[:, :-1] = t[:, 1:] - t[:, :-1]
    dt[:, -1] = width
    return t.astype(dtype), dt.astype(dtype)


def integrate_ray(t, dt, color, sigma, foreground):
    """Composite one ray or a batch: returns (C, D, A).

    Accepts arrays or tape tensors; with tensor inputs the outputs stay on
    the tape. Shapes: t/dt/sigma/foreground [..., G], color [..., G, 3].
    """
    tensor_in = any(isinstance(v, tape.Tensor) for v in (color, sigma, foreground))
    sigma_t = tape.as_tensor(sigma)
    single = sigma_t.data.ndim == 1
    if single:
        sigma_t = tape.reshape(sigma_t, (1, -1))
        fg_t = tape.reshape(tape.as_tensor(foreground), (1, -1))
        color_t = tape.reshape(tape.as_tensor(color), (1, -1, 3))
        t = np.asarray(t).reshape(1, -1)
        dt = np.asarray(dt).reshape(1, -1)
    else:
        fg_t = tape.as_tensor(foreground)
        color_t = tape.as_tensor(color)
    w = tape.compositing_weights(sigma_t, fg_t, dt)
    c = tape.sum_(tape.mul(tape.reshape(w, w.shape + (1,)), color_t), axis=-2)
    d = tape.sum_(tape.mul(w, np.asarray(t, dtype=w.dtype)), axis=-1)
    a = tape.sum_(w, axis=-1)
    if single:
        c, d, a = tape.reshape(c, (3,)), tape.reshape(d, ()), tape.reshape(a, ())
    if tensor_in:
        return c, d, a
    return c.data, d.data, a.data


def render_rays_t(scene: Scene, origins, dirs, t0, t1, hit,
                  samples: int, rng=None, dtype=np.float32):
    """Differentiable render of a ray batch.

    Geometry arrives as plain float64 arrays (rays carry no gradients, and
    t_near/t_far already clip to the subject box); the result tensors
    C [N, 3], D [N], A [N] cover every input ray with exact zeros where
    `hit` is false.
    """
    n = origins.shape[0]
    hit_idx = np.flatnonzero(hit)
    zeros3 = tape.as_tensor(np.zeros((n, 3), dtype=dtype))
    zeros1 = tape.as_tensor(np.zeros(n, dtype=dtype))
    if hit_idx.size == 0:
        return zeros3, zeros1, zeros1

    t, dt = stratified_samples(t0[hit_idx], t1[hit_idx], samples, rng=rng, dtype=dtype)
    x = origins[hit_idx, None, :] + t[..., None].astype(np.float64) * dirs[hit_idx, None, :]
    nh = hit_idx.size
    x_flat = tape.as_tensor(x.reshape(nh * samples, 3).astype(dtype))

    grid = scene.volume.weights_t()
    x_can, fg_flat, live = warp_points_t(grid, scene.volume.box, scene.bases, x_flat)

    live_idx = np.flatnonzero(live)
    if live_idx.size > 0:
        rgb_live, sigma_live = scene.field.query_t(tape.take_rows(x_can, live_idx), scene.app_embed)
        sigma = tape.reshape(tape.scatter_rows(sigma_live, live_idx, nh * samples), (nh, samples))
        rgb = tape.reshape(tape.scatter_rows(rgb_live, live_idx, nh * samples), (nh, samples, 3))
    else:
        sigma = tape.as_tensor(np.zeros((nh, samples), dtype=dtype))
        rgb = tape.as_tensor(np.zeros((nh, samples, 3), dtype=dtype))

    fg = tape.reshape(fg_flat, (nh, samples))
    c, d, a = integrate_ray(t, dt, rgb, sigma, fg)
    if hit_idx.size == n:
        return c, d, a
    return (tape.scatter_rows(c, hit_idx, n),
            tape.scatter_rows(d, hit_idx, n),
            tape.scatter_rows(a, hit_idx, n))


def patch_pixels(patch: PatchSpec):
    xs = np.arange(patch.x0, patch.x0 + patch.size)
    ys = np.arange(patch.y0, patch.y0 + patch.size)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)  # row-major over the patch


def render_patch_t(scene: Scene, patch: PatchSpec, camera: Camera, subject_box: Aabb,
                   samples: int = SAMPLES_PER_RAY, rng=None, dtype=np.float32):
    """Render a square patch; returns (C [H*W, 3], D [H*W], A [H*W]) tensors
    in row-major pixel order."""
    pixels = patch_pixels(patch)
    origins, dirs, t0, t1, hit = rays_for_pixels(camera, pixels, subject_box)
    return render_rays_t(scene, origins, dirs, t0, t1, hit, samples, rng=rng, dtype=dtype)


def render_patch(scene: Scene, patch: PatchSpec, camera: Camera, subject_box: Aabb,
                 samples: int = SAMPLES_PER_RAY, rng=None, dtype=np.float32) -> RenderedPatch:
    c, d, a = render_patch_t(scene, patch, camera, subject_box, samples, rng=rng, dtype=dtype)
    h = patch.size
    return RenderedPatch(c.data.reshape(h, h, 3), d.data.reshape(h, h), a.data.reshape(h, h))


def render_image(scene: Scene, camera: Camera, subject_box: Aabb,
                 samples: int = SAMPLES_PER_RAY, chunk: int = 8192,
                 dtype=np.float32) -> RenderedPatch:
    """Full-frame deterministic render (bin-center sampling), chunked over rays."""
    w, h = camera.width, camera.height
    gx, gy = np.meshgrid(np.arange(w), np.arange(h), indexing="xy")
    pixels = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)
    origins, dirs, t0, t1, hit = rays_for_pixels(camera, pixels, subject_box)
    color = np.zeros((h * w, 3), dtype=dtype)
    depth = np.zeros(h * w, dtype=dtype)
    alpha = np.zeros(h * w, dtype=dtype)
    for lo in range(0, h * w, chunk):
        sl = slice(lo, min(lo + chunk, h * w))
        c, d, a = render_rays_t(scene, origins[sl], dirs[sl], t0[sl], t1[sl], hit[sl],
                                samples, rng=None, dtype=dtype)
        color[sl] = c.data
        depth[sl] = d.data
        alpha[sl] = a.data
    return RenderedPatch(color.reshape(h, w, 3), depth.reshape(h, w), alpha.reshape(h, w))


def sample_patches(rng, bbox, image_size, count: int, size: int, kind: str,
                   frame_index: int):
    """Draw patch specs with centers uniform inside a 2D subject box.

    bbox: (x0, y0, x1, y1) pixels. Patches are clamped to stay inside the
    image; a degenerate box is rejected.
    """
    x0, y0, x1, y1 = bbox
    w, h = image_size
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"degenerate subject box {bbox}")
    if size > w or size > h:
        raise ValueError(f"patch size {size} exceeds image {w}x{h}")
    out = []
    for _ in range(count):
        cx = rng.uniform(x0, x1)
        cy = rng.uniform(y0, y1)
        px = int(np.clip(round(cx - size / 2), 0, w - size))
        py = int(np.clip(round(cy - size / 2), 0, h - size))
        out.append(PatchSpec(frame_index, px, py, size, kind))
    return out


def skeleton_bbox_2d(camera: Camera, rig, pose, pad_scale: float = 1.15):
    """Projected 2D box of the posed skeleton capsules (fallback when no
    mask exists, e.g. unseen orbit cameras)."""
    from .skeleton import posed_capsules

    pts = []
    for head, tail, r in posed_capsules(rig, pose):
        for p in (head, tail):
            for a in range(3):
                for s in (-1.0, 1.0):
                    q = p.copy()
                    q[a] += s * r * pad_scale
                    pts.append(q)
    box = projected_bbox_2d(camera, np.array(pts))
    if box is None:
        raise ValueError("posed skeleton projects entirely behind the camera")
    return box
