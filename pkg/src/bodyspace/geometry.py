"""Cameras, rays, rigid transforms, and view synthesis around the subject.

Conventions (fixed for determinism):
  - OpenCV camera frame: +X right, +Y down, +Z forward; u = fx*X/Z + cx.
  - Extrinsics map world -> camera.
  - Pixel rays pass through pixel centers (offset +0.5).
  - The up axis used for orbiting novel views is world +Y of the canonical
    skeleton unless a caller overrides it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WORLD_UP = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class RigidTransform:
    """Rotation then translation: x -> R x + t."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("RigidTransform expects a 3x3 rotation and a 3-vector")

    @staticmethod
    def identity():
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: compose(self, other)(x) = self(other(x))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def is_valid_rotation(self, tol=1e-5) -> bool:
        r = self.rotation
        return (np.abs(r @ r.T - np.eye(3)).max() < tol) and abs(np.linalg.det(r) - 1.0) < tol


def rotation_about_axis(axis, angle) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis."""
    axis = np.asarray(axis, dtype=np.float64)
    k = axis / np.linalg.norm(axis)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)


def rotation_about_line(axis, angle, point) -> RigidTransform:
    """Rigid rotation about the line through `point` with direction `axis`."""
    r = rotation_about_axis(axis, angle)
    point = np.asarray(point, dtype=np.float64)
    return RigidTransform(r, point - r @ point)


@dataclass(frozen=True)
class Aabb:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=np.float64))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=np.float64))
        if np.any(self.hi < self.lo):
            raise ValueError("Aabb with hi < lo")

    def inflate(self, factor: float) -> "Aabb":
        center = 0.5 * (self.lo + self.hi)
        half = 0.5 * (self.hi - self.lo) * factor
        return Aabb(center - half, center + half)

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    @staticmethod
    def of_points(points) -> "Aabb":
        points = np.asarray(points)
        return Aabb(points.min(axis=0), points.max(axis=0))


@dataclass(frozen=True)
class Camera:
    intrinsics: np.ndarray  # (3, 3), pixels
    extrinsics: RigidTransform  # world -> camera
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "intrinsics", np.asarray(self.intrinsics, dtype=np.float64))
        if self.intrinsics.shape != (3, 3):
            raise ValueError("intrinsics must be 3x3")
        if self.intrinsics[0, 0] <= 0 or self.intrinsics[1, 1] <= 0:
            raise ValueError("focal entries must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world space."""
        e = self.extrinsics
        return -e.rotation.T @ e.translation

    def camera_to_world(self) -> RigidTransform:
        return self.extrinsics.inverse()

    def project(self, points) -> np.ndarray:
        """World points [N, 3] to pixel coords [N, 2]; points behind the
        camera project to nan."""
        pc = self.extrinsics.apply(np.atleast_2d(points))
        z = pc[:, 2].copy()
        z[z <= 1e-9] = np.nan
        u = self.intrinsics[0, 0] * pc[:, 0] / z + self.intrinsics[0, 2]
        v = self.intrinsics[1, 1] * pc[:, 1] / z + self.intrinsics[1, 2]
        return np.stack([u, v], axis=1)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit
    t_near: float
    t_far: float

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=np.float64))
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")
        if not self.t_near < self.t_far:
            raise ValueError("t_near must be < t_far")

    def at(self, t):
        return self.origin + np.multiply.outer(t, self.direction)


def positional_encoding(x, bands: int) -> np.ndarray:
    """Sinusoidal encoding of a 3-vector: per frequency k in 0..bands-1 and
    per coordinate, the pair (sin(2^k pi x), cos(2^k pi x)). Length 6*bands."""
    if bands < 1:
        raise ValueError("bands must be >= 1")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    freqs = (2.0 ** np.arange(bands)) * np.pi
    ang = np.multiply.outer(freqs, x)  # [bands, d]
    return np.stack([np.sin(ang), np.cos(ang)], axis=-1).reshape(-1)


def ray_aabb(origin, direction, box: Aabb):
    """Slab intersection; returns (t0, t1) with t0 < t1 and t1 > 0, or None."""
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / direction
        t_lo = (box.lo - origin) * inv
        t_hi = (box.hi - origin) * inv
    # parallel-to-slab axes: inside test instead of interval
    par = direction == 0.0
    if np.any(par & ((origin < box.lo) | (origin > box.hi))):
        return None
    t_lo, t_hi = np.where(par, -np.inf, np.minimum(t_lo, t_hi)), np.where(par, np.inf, np.maximum(t_lo, t_hi))
    t0 = np.max(t_lo)
    t1 = np.min(t_hi)
    if t0 >= t1 or t1 <= 0:
        return None
    return max(t0, 0.0), t1


def rays_for_pixels(camera: Camera, pixels, box: Aabb):
    """Batched ray construction through pixel centers with box clipping.

    pixels: integer [N, 2] (x, y). Returns (origins [N,3], dirs [N,3],
    t_near [N], t_far [N], hit [N]); origins/dirs are defined for every
    pixel, near/far only where hit is True.
    """
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    k = camera.intrinsics
    cam2world = camera.camera_to_world()
    px = pixels[:, 0] + 0.5
    py = pixels[:, 1] + 0.5
    d_cam = np.stack([(px - k[0, 2]) / k[0, 0], (py - k[1, 2]) / k[1, 1], np.ones_like(px)], axis=1)
    d_world = d_cam @ cam2world.rotation.T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origin = camera.center

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d_world
        t_a = (box.lo[None, :] - origin[None, :]) * inv
        t_b = (box.hi[None, :] - origin[None, :]) * inv
    par = d_world == 0.0
    inside_slab = (origin[None, :] >= box.lo[None, :]) & (origin[None, :] <= box.hi[None, :])
    lo = np.where(par, np.where(inside_slab, -np.inf, np.inf), np.minimum(t_a, t_b))
    hi = np.where(par, np.where(inside_slab, np.inf, -np.inf), np.maximum(t_a, t_b))
    t0 = lo.max(axis=1)
    t1 = hi.min(axis=1)
    hit = (t0 < t1) & (t1 > 0)
    t0 = np.maximum(t0, 0.0)
    origins = np.broadcast_to(origin, d_world.shape).copy()
    return origins, d_world, t0, t1, hit


def pixel_to_ray(camera: Camera, px, box: Aabb):
    """Ray through one pixel center, clipped to the subject box; None on miss."""
    px = np.asarray(px, dtype=np.float64)
    if not (0 <= px[0] < camera.width and 0 <= px[1] < camera.height):
        raise ValueError(f"pixel {px} outside {camera.width}x{camera.height} image")
    origins, dirs, t0, t1, hit = rays_for_pixels(camera, px[None, :], box)
    if not hit[0]:
        return None
    return Ray(origins[0], dirs[0], float(t0[0]), float(t1[0]))


def orbit_camera(camera: Camera, phi: float, body_center, up=WORLD_UP) -> Camera:
    """Rotate the camera pose by phi about the axis (body_center, up).

    Intrinsics and image size are unchanged; only the world pose moves.
    """
    up = np.asarray(up, dtype=np.float64)
    if abs(np.linalg.norm(up) - 1.0) > 1e-6:
        raise ValueError("up must be unit length")
    motion = rotation_about_line(up, phi, body_center)
    new_extrinsics = camera.extrinsics.compose(motion.inverse())
    return Camera(camera.intrinsics, new_extrinsics, camera.width, camera.height)


def look_at_camera(eye, target, focal: float, width: int, height: int, up=WORLD_UP) -> Camera:
    """Camera at `eye` looking toward `target` (OpenCV axes, y-down image)."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        raise ValueError("view direction parallel to up")
    right /= nr
    down = np.cross(fwd, right)
    r_wc = np.stack([right, down, fwd])  # rows = camera axes in world
    intr = np.array([[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]])
    return Camera(intr, RigidTransform(r_wc, -r_wc @ eye), width, height)


def projected_bbox_2d(camera: Camera, points, pad: float = 0.0):
    """Clamped 2D bounding box of projected world points.

    Returns (x0, y0, x1, y1) in pixels (inclusive-exclusive) or None if no
    point projects in front of the camera.
    """
    uv = camera.project(points)
    uv = uv[~np.isnan(uv).any(axis=1)]
    if uv.size == 0:
        return None
    x0 = int(np.floor(uv[:, 0].min() - pad))
    y0 = int(np.floor(uv[:, 1].min() - pad))
    x1 = int(np.ceil(uv[:, 0].max() + pad)) + 1
    y1 = int(np.ceil(uv[:, 1].max() + pad)) + 1
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, camera.width), min(y1, camera.height)
    if x0 >= x1 or y0 >= y1:
        return None
    return x0, y0, x1, y1
