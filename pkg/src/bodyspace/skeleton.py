"""Articulated skeleton: rig, body pose, forward kinematics, motion bases,
and the appearance-conditioned pose correction network.

Bone-local frames sit at each bone's rest head with axes aligned to the
canonical world, so the rest transform of bone i is a pure translation by
rest_head[i]. Joint rotations are axis-angle, applied about the bone head in
the parent's frame. The canonical pose is the rig's rest geometry (T-pose by
construction of the rig).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .geometry import Aabb, RigidTransform, rotation_about_axis

POSE_EMBED_DIM = 16

# basis matrices E with skew(w) = sum_c w_c * E[c]
_SKEW_BASIS = np.zeros((3, 3, 3))
_SKEW_BASIS[0, 1, 2] = -1.0
_SKEW_BASIS[0, 2, 1] = 1.0
_SKEW_BASIS[1, 0, 2] = 1.0
_SKEW_BASIS[1, 2, 0] = -1.0
_SKEW_BASIS[2, 0, 1] = -1.0
_SKEW_BASIS[2, 1, 0] = 1.0
_SKEW_FLAT = _SKEW_BASIS.reshape(3, 9)


@dataclass(frozen=True)
class SkeletonRig:
    parent: tuple  # per-bone parent index, None for the root (bone 0)
    rest_head: np.ndarray  # [K, 3]
    rest_tail: np.ndarray  # [K, 3]
    bone_radius: np.ndarray  # [K]

    def __post_init__(self):
        object.__setattr__(self, "rest_head", np.asarray(self.rest_head, dtype=np.float64))
        object.__setattr__(self, "rest_tail", np.asarray(self.rest_tail, dtype=np.float64))
        object.__setattr__(self, "bone_radius", np.asarray(self.bone_radius, dtype=np.float64))
        k = len(self.parent)
        if k < 1:
            raise ValueError("rig needs at least one bone")
        if self.parent[0] is not None:
            raise ValueError("bone 0 must be the root")
        for i, p in enumerate(self.parent[1:], start=1):
            if p is None or not (0 <= p < i):
                raise ValueError(f"bone {i} must have a parent earlier in the list, got {p}")
        if self.rest_head.shape != (k, 3) or self.rest_tail.shape != (k, 3):
            raise ValueError("rest_head/rest_tail must be [K, 3]")
        lengths = np.linalg.norm(self.rest_tail - self.rest_head, axis=1)
        if np.any(lengths <= 0):
            raise ValueError("rest bones must have positive length")
        if np.any(self.bone_radius <= 0):
            raise ValueError("bone radii must be positive")

    @property
    def bone_count(self) -> int:
        return len(self.parent)

    def canonical_pose(self) -> "BodyPose":
        return BodyPose(RigidTransform.identity(), np.zeros((self.bone_count, 3)))

    def rest_aabb(self, inflate: float = 1.0) -> Aabb:
        pts = np.concatenate([self.rest_head - self.bone_radius[:, None],
                              self.rest_head + self.bone_radius[:, None],
                              self.rest_tail - self.bone_radius[:, None],
                              self.rest_tail + self.bone_radius[:, None]])
        return Aabb.of_points(pts).inflate(inflate)

    def to_json(self) -> dict:
        return {
            "parent": [(-1 if p is None else int(p)) for p in self.parent],
            "rest_head": self.rest_head.tolist(),
            "rest_tail": self.rest_tail.tolist(),
            "bone_radius": self.bone_radius.tolist(),
        }

    @staticmethod
    def from_json(d: dict) -> "SkeletonRig":
        parent = tuple(None if p < 0 else int(p) for p in d["parent"])
        return SkeletonRig(parent, np.array(d["rest_head"]), np.array(d["rest_tail"]),
                           np.array(d["bone_radius"]))


def canonicalize_angles(omega):
    """Wrap each bone's axis-angle so the magnitude is <= pi."""
    omega = np.asarray(omega, dtype=np.float64).copy()
    norms = np.linalg.norm(omega, axis=-1, keepdims=True)
    big = norms[..., 0] > np.pi
    if np.any(big):
        wrapped = np.mod(norms[big], 2 * np.pi)
        # a magnitude in (pi, 2pi) is the same rotation as (wrapped - 2pi)
        scale = np.where(wrapped > np.pi, (wrapped - 2 * np.pi) / norms[big], wrapped / norms[big])
        omega[big] *= scale
    return omega


@dataclass(frozen=True)
class BodyPose:
    root: RigidTransform
    joint_angles: np.ndarray  # [K, 3] axis-angle, radians

    def __post_init__(self):
        object.__setattr__(self, "joint_angles",
                           canonicalize_angles(np.asarray(self.joint_angles, dtype=np.float64)))

    @property
    def bone_count(self):
        return self.joint_angles.shape[0]

    def joints(self, rig: SkeletonRig) -> np.ndarray:
        """Posed joint (bone head) positions, derived via forward kinematics."""
        return np.stack([t.translation for t in forward_kinematics(rig, self)])

    def to_json(self) -> dict:
        return {
            "root_rotation": self.root.rotation.tolist(),
            "root_translation": self.root.translation.tolist(),
            "joint_angles": self.joint_angles.tolist(),
        }

    @staticmethod
    def from_json(d: dict) -> "BodyPose":
        return BodyPose(RigidTransform(np.array(d["root_rotation"]), np.array(d["root_translation"])),
                        np.array(d["joint_angles"]))


def forward_kinematics(rig: SkeletonRig, pose: BodyPose):
    """Per-bone posed transforms (bone local -> world).

    Bone i's local frame has its origin at rest_head[i] with world axes, so
    at the canonical pose every transform is (I, rest_head[i]) and maps the
    rest bone onto itself.
    """
    if pose.bone_count != rig.bone_count:
        raise ValueError(f"pose has {pose.bone_count} bones, rig has {rig.bone_count}")
    out = []
    for i in range(rig.bone_count):
        local_rot = rotation_about_axis_vec(pose.joint_angles[i])
        if rig.parent[i] is None:
            r = pose.root.rotation @ local_rot
            head = pose.root.apply(rig.rest_head[i])
        else:
            par = out[rig.parent[i]]
            r = par.rotation @ local_rot
            head = par.rotation @ (rig.rest_head[i] - rig.rest_head[rig.parent[i]]) + par.translation
        out.append(RigidTransform(r, head))
    return out


def rotation_about_axis_vec(omega) -> np.ndarray:
    """Rodrigues from an axis-angle 3-vector (angle = |omega|)."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega)
    if theta < 1e-12:
        return np.eye(3)
    return rotation_about_axis(omega / theta, theta)


def posed_transform_of_point(transform: RigidTransform, rest_head, point):
    """Where a canonical point rigidly attached to a bone lands when posed."""
    return transform.rotation @ (np.asarray(point) - rest_head) + transform.translation


def motion_bases(rig: SkeletonRig, pose: BodyPose):
    """Per-bone rigid transforms from observation space back to canonical.

    basis_i = rest_transform_i o inverse(posed_transform_i): applying it to a
    point rigidly attached to posed bone i returns the point's rest location.
    """
    bases = []
    for i, t in enumerate(forward_kinematics(rig, pose)):
        rt = t.rotation.T
        bases.append(RigidTransform(rt, rig.rest_head[i] - rt @ t.translation))
    return bases


def posed_capsules(rig: SkeletonRig, pose: BodyPose):
    """[(head, tail, radius)] of every bone under the pose."""
    caps = []
    for i, t in enumerate(forward_kinematics(rig, pose)):
        head = t.translation
        tail = posed_transform_of_point(t, rig.rest_head[i], rig.rest_tail[i])
        caps.append((head, tail, float(rig.bone_radius[i])))
    return caps


def posed_aabb(rig: SkeletonRig, pose: BodyPose, inflate: float = 1.0) -> Aabb:
    pts = []
    for head, tail, r in posed_capsules(rig, pose):
        pts.extend([head - r, head + r, tail - r, tail + r])
    return Aabb.of_points(np.array(pts)).inflate(inflate)


# ---------------------------------------------------------------------------
# differentiable kinematics (tape path)


def rodrigues_t(omega):
    """Axis-angle [K, 3] -> rotation matrices [K, 3, 3] on the tape.

    Built from primitive ops with the half-angle form for (1 - cos t)/t^2 so
    both the value and the gradient stay exact near t = 0.
    """
    omega = tape.as_tensor(omega)
    dtype = omega.data.dtype
    k = omega.data.shape[0]
    t2 = tape.sum_(tape.square(omega), axis=1)  # [K]
    theta = tape.sqrt(tape.add(t2, 1e-30))
    a = tape.div(tape.sin(theta), theta)  # sin t / t
    half = tape.mul(theta, 0.5)
    sh = tape.div(tape.sin(half), half)
    b = tape.mul(tape.square(sh), 0.5)  # (1 - cos t) / t^2
    skew = tape.reshape(tape.matmul(omega, np.asarray(_SKEW_FLAT, dtype=dtype)), (k, 3, 3))
    skew2 = tape.matmul(skew, skew)
    eye = np.broadcast_to(np.eye(3, dtype=dtype), (k, 3, 3))
    a3 = tape.reshape(a, (k, 1, 1))
    b3 = tape.reshape(b, (k, 1, 1))
    return tape.add(tape.as_tensor(eye.copy()), tape.add(tape.mul(a3, skew), tape.mul(b3, skew2)))


def fk_t(rig: SkeletonRig, root: RigidTransform, angles):
    """Differentiable forward kinematics.

    angles: tape tensor [K, 3]. Returns (rotations [list of (3,3) tensors],
    heads [list of (3,) tensors]) per bone, world frame.
    """
    angles = tape.as_tensor(angles)
    dtype = angles.data.dtype
    local = rodrigues_t(angles)  # [K, 3, 3]
    root_r = tape.as_tensor(root.rotation.astype(dtype))
    rots, heads = [], []
    for i in range(rig.bone_count):
        li = tape.slice_(local, i)
        if rig.parent[i] is None:
            r = tape.matmul(root_r, li)
            head = tape.as_tensor(root.apply(rig.rest_head[i]).astype(dtype))
        else:
            p = rig.parent[i]
            r = tape.matmul(rots[p], li)
            off = (rig.rest_head[i] - rig.rest_head[p]).astype(dtype)
            head = tape.add(tape.matmul(rots[p], tape.as_tensor(off)), heads[p])
        rots.append(r)
        heads.append(head)
    return rots, heads


def motion_bases_t(rig: SkeletonRig, root: RigidTransform, angles):
    """Differentiable observation->canonical bases.

    Returns per-bone (rotation [3,3], translation [3]) tensors with
    basis_i(x) = R_i x + t_i mapping posed points to canonical space.
    """
    rots, heads = fk_t(rig, root, angles)
    dtype = tape.as_tensor(angles).data.dtype
    bases = []
    for i in range(rig.bone_count):
        rt = tape.transpose(rots[i])
        t = tape.sub(tape.as_tensor(rig.rest_head[i].astype(dtype)), tape.matmul(rt, heads[i]))
        bases.append((rt, t))
    return bases


def bases_as_arrays(bases):
    """Tape bases -> list of RigidTransform (detached)."""
    return [RigidTransform(r.data.astype(np.float64), t.data.astype(np.float64)) for r, t in bases]


def bases_from_transforms(transforms, dtype=np.float64):
    """Plain RigidTransforms -> constant tape bases."""
    return [(tape.as_tensor(t.rotation.astype(dtype)), tape.as_tensor(t.translation.astype(dtype)))
            for t in transforms]


# ---------------------------------------------------------------------------
# pose correction network


class PoseCorrectionNet:
    """4-layer MLP, width 256: (joint angles, pose embedding) -> angle residuals.

    The final layer starts at zero so a fresh network is the identity
    correction and training begins from the estimated pose.
    """

    WIDTH = 256
    DEPTH = 4

    def __init__(self, bone_count: int, rng: np.random.Generator, dtype=np.float32,
                 embed_dim: int = POSE_EMBED_DIM, width: int = None):
        self.bone_count = bone_count
        self.embed_dim = embed_dim
        width = width or self.WIDTH
        self.width = width
        in_dim = bone_count * 3 + embed_dim
        self.params = {}
        dims = [in_dim] + [width] * (self.DEPTH - 1) + [bone_count * 3]
        for li in range(self.DEPTH):
            fan_in = dims[li]
            w = rng.standard_normal((dims[li], dims[li + 1])) * np.sqrt(2.0 / fan_in)
            b = np.zeros(dims[li + 1])
            if li == self.DEPTH - 1:
                w = np.zeros_like(w)  # identity correction at init
            self.params[f"pose.w{li}"] = tape.parameter(w.astype(dtype), name=f"pose.w{li}")
            self.params[f"pose.b{li}"] = tape.parameter(b.astype(dtype), name=f"pose.b{li}")

    def param_list(self):
        return list(self.params.values())

    def residual_t(self, joint_angles, pose_embed):
        """Tape forward pass: [K, 3] angles + [16] embedding -> [K, 3] residual."""
        angles = tape.as_tensor(joint_angles)
        dtype = angles.data.dtype
        flat = tape.reshape(angles, (1, self.bone_count * 3))
        emb = tape.reshape(tape.as_tensor(pose_embed, dtype=dtype), (1, self.embed_dim))
        h = tape.concat([flat, emb], axis=1)
        for li in range(self.DEPTH):
            h = tape.linear(h, self.params[f"pose.w{li}"], self.params[f"pose.b{li}"])
            if li < self.DEPTH - 1:
                h = tape.relu(h)
        return tape.reshape(h, (self.bone_count, 3))

    def residual(self, joint_angles, pose_embed) -> np.ndarray:
        dtype = self.params["pose.w0"].data.dtype
        out = self.residual_t(tape.as_tensor(np.asarray(joint_angles, dtype=dtype)),
                              np.asarray(pose_embed, dtype=dtype))
        return out.data.astype(np.float64)


def correct_pose(net: PoseCorrectionNet, pose: BodyPose, pose_embed) -> BodyPose:
    """Pose with predicted angle residuals added; root unchanged, joints
    implied by the corrected angles."""
    emb = np.asarray(pose_embed)
    if emb.shape != (net.embed_dim,):
        raise ValueError(f"pose embedding must have length {net.embed_dim}")
    delta = net.residual(pose.joint_angles, emb)
    return BodyPose(pose.root, pose.joint_angles + delta)
