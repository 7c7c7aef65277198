"""Synthetic capsule-figure datasets with an analytic oracle renderer.

The generator builds a small articulated figure out of capsules, gives each
appearance set its own per-bone albedo palette, randomizes joint angles per
frame, and renders ground truth with exact ray-capsule intersection (flat
albedo, black background) plus exact silhouette masks. Cameras sit on a ring
around the subject. Because the same analytic renderer can produce ground
truth for any camera, it doubles as the independent oracle for end-to-end
evaluation, including held-out orbit views.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Camera, RigidTransform, look_at_camera, rays_for_pixels
from .skeleton import BodyPose, SkeletonRig, posed_aabb, posed_capsules

# template figure: torso root, head, two arms, two legs (prefixes are valid rigs)
_TEMPLATE = [
    # name, parent, head, tail, radius
    ("torso", None, (0.00, -0.30, 0.00), (0.00, 0.25, 0.00), 0.155),
    ("head", 0, (0.00, 0.25, 0.00), (0.00, 0.55, 0.00), 0.115),
    ("arm_l", 0, (0.10, 0.18, 0.00), (0.48, 0.14, 0.00), 0.070),
    ("arm_r", 0, (-0.10, 0.18, 0.00), (-0.48, 0.14, 0.00), 0.070),
    ("leg_l", 0, (0.09, -0.30, 0.00), (0.12, -0.85, 0.00), 0.085),
    ("leg_r", 0, (-0.09, -0.30, 0.00), (-0.12, -0.85, 0.00), 0.085),
]


@dataclass(frozen=True)
class SynthSpec:
    bones: int = 4
    sets: int = 3
    poses_per_set: int = 8
    image_size: int = 128
    seed: int = 0
    camera_distance: float = 3.0
    camera_elevation: float = 0.14  # radians above the equator
    angle_scale: float = 0.45  # max |joint angle| per axis, radians

    def __post_init__(self):
        if self.bones < 1 or self.bones > len(_TEMPLATE):
            raise ValueError(f"bones must be in [1, {len(_TEMPLATE)}]")
        if self.sets < 1 or self.poses_per_set < 1:
            raise ValueError("need at least one appearance set and one pose per set")
        if self.image_size < 16:
            raise ValueError("image_size too small")


def build_rig(bones: int) -> SkeletonRig:
    rows = _TEMPLATE[:bones]
    return SkeletonRig(tuple(r[1] for r in rows),
                       np.array([r[2] for r in rows]),
                       np.array([r[3] for r in rows]),
                       np.array([r[4] for r in rows]))


def ray_capsule_hits(origins, dirs, p0, p1, radius):
    """Nearest positive hit parameter per ray against one capsule (inf on miss)."""
    axis = p1 - p0
    length = np.linalg.norm(axis)
    ba = axis / length
    oc = origins - p0
    d_par = (dirs @ ba)[:, None] * ba
    oc_par = (oc @ ba)[:, None] * ba
    dp = dirs - d_par
    op = oc - oc_par
    a = (dp * dp).sum(axis=1)
    b = 2.0 * (dp * op).sum(axis=1)
    c = (op * op).sum(axis=1) - radius * radius
    best = np.full(origins.shape[0], np.inf)

    with np.errstate(invalid="ignore", divide="ignore"):
        disc = b * b - 4 * a * c
        ok = (disc >= 0) & (a > 1e-12)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t_cyl = np.where(ok, (-b - sq) / (2 * a), np.inf)
        # reject behind-camera and out-of-segment body hits
        s = ((oc + t_cyl[:, None] * dirs) @ ba)
        body = ok & (t_cyl > 1e-9) & (s >= 0) & (s <= length)
        best = np.where(body, t_cyl, best)

    for cap_center in (p0, p1):
        om = origins - cap_center
        bb = 2.0 * (om * dirs).sum(axis=1)
        cc = (om * om).sum(axis=1) - radius * radius
        disc = bb * bb - 4 * cc
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t_sph = np.where(ok, (-bb - sq) / 2.0, np.inf)
        t_sph = np.where(t_sph > 1e-9, t_sph, np.inf)
        best = np.minimum(best, t_sph)
    return best


def render_capsule_frame(camera: Camera, capsules, albedos):
    """Analytic oracle render: (rgb [H,W,3] float, mask [H,W] bool, depth [H,W]).

    Flat albedo shading on a black background; mask is the exact hit test at
    pixel centers.
    """
    w, h = camera.width, camera.height
    gx, gy = np.meshgrid(np.arange(w), np.arange(h), indexing="xy")
    px = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)
    # box irrelevant for the oracle: use a huge one so every ray is defined
    from .geometry import Aabb

    big = Aabb(np.full(3, -1e6), np.full(3, 1e6))
    origins, dirs, *_ = rays_for_pixels(camera, px, big)
    n = px.shape[0]
    best_t = np.full(n, np.inf)
    best_i = np.full(n, -1)
    for i, (p0, p1, r) in enumerate(capsules):
        t = ray_capsule_hits(origins, dirs, p0, p1, r)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_i = np.where(closer, i, best_i)
    mask = best_i >= 0
    rgb = np.zeros((n, 3))
    rgb[mask] = np.asarray(albedos)[best_i[mask]]
    depth = np.where(mask, best_t, 0.0)
    return rgb.reshape(h, w, 3), mask.reshape(h, w), depth.reshape(h, w)


def palette_for_set(rng: np.random.Generator, bones: int) -> np.ndarray:
    """Per-bone albedos, bright enough to be visible on black."""
    return rng.uniform(0.25, 0.95, (bones, 3))


def random_pose(rig: SkeletonRig, rng: np.random.Generator, angle_scale: float) -> BodyPose:
    angles = rng.uniform(-angle_scale, angle_scale, (rig.bone_count, 3))
    angles[0] = [0.0, rng.uniform(-np.pi, np.pi), 0.0]  # root yaw only
    return BodyPose(RigidTransform.identity(), angles)


def ring_camera(spec: SynthSpec, rig: SkeletonRig, azimuth: float) -> Camera:
    box = rig.rest_aabb()
    center = box.center
    height = box.hi[1] - box.lo[1]
    focal = 0.62 * spec.image_size * spec.camera_distance / (height * 1.25)
    eye = center + spec.camera_distance * np.array([
        np.sin(azimuth) * np.cos(spec.camera_elevation),
        np.sin(spec.camera_elevation),
        -np.cos(azimuth) * np.cos(spec.camera_elevation),
    ])
    return look_at_camera(eye, center, focal, spec.image_size, spec.image_size)


def generate_synthetic(spec: SynthSpec, out_dir) -> Path:
    """Write a complete dataset directory; returns its path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rig = build_rig(spec.bones)
    seeds = np.random.SeedSequence(spec.seed).spawn(2)
    pose_rng = np.random.default_rng(seeds[0])
    palette_rng = np.random.default_rng(seeds[1])
    albedos = [palette_for_set(palette_rng, spec.bones) for _ in range(spec.sets)]

    n = spec.sets * spec.poses_per_set
    frames = []
    for j in range(n):
        set_index = j // spec.poses_per_set
        pose = random_pose(rig, pose_rng, spec.angle_scale)
        camera = ring_camera(spec, rig, azimuth=2 * np.pi * j / n)
        caps = posed_capsules(rig, pose)
        rgb, mask, _ = render_capsule_frame(camera, caps, albedos[set_index])
        img_rel = f"images/frame_{j:04d}.png"
        mask_rel = f"masks/frame_{j:04d}.png"
        Image.fromarray(np.round(rgb * 255).astype(np.uint8)).save(out / img_rel)
        Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(out / mask_rel)
        frames.append({
            "image": img_rel,
            "mask": mask_rel,
            "appearance_set": set_index,
            "camera": {
                "intrinsics": camera.intrinsics.tolist(),
                "rotation": camera.extrinsics.rotation.tolist(),
                "translation": camera.extrinsics.translation.tolist(),
                "width": camera.width,
                "height": camera.height,
            },
            "pose": pose.to_json(),
        })

    with open(out / "rig.json", "w") as f:
        json.dump(rig.to_json(), f)
    with open(out / "metadata.json", "w") as f:
        json.dump(frames, f)
    # generator sidecar: lets evaluation re-render oracle ground truth for
    # arbitrary (e.g. orbit) cameras
    with open(out / "gen_spec.json", "w") as f:
        json.dump({"spec": asdict(spec), "albedos": [a.tolist() for a in albedos]}, f)
    return out


def load_gen_spec(dataset_dir):
    """(SynthSpec, albedos) if the dataset was produced by this generator."""
    path = Path(dataset_dir) / "gen_spec.json"
    if not path.exists():
        return None
    with open(path) as f:
        d = json.load(f)
    return SynthSpec(**d["spec"]), [np.array(a) for a in d["albedos"]]


def oracle_orbit_view(rig: SkeletonRig, pose: BodyPose, camera: Camera, albedos):
    """Oracle ground truth for any camera of a posed figure."""
    caps = posed_capsules(rig, pose)
    return render_capsule_frame(camera, caps, albedos)


def body_center(rig: SkeletonRig, pose: BodyPose) -> np.ndarray:
    return posed_aabb(rig, pose).center
