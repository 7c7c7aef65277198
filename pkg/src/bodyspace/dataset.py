"""Dataset ingestion: rig + per-frame images, masks, cameras, poses.

Directory layout:
    rig.json                           bone hierarchy, rest geometry, radii
    metadata.json                      array of frame records
    images/*.png  masks/*.png          8-bit; mask 255 marks the subject

Frame records carry the camera (row-major 3x3 intrinsics/rotation plus a
translation in scene units), the body pose, the appearance set index, and
optionally an ignore mask whose pixels are dropped from every loss. Loading
composites the subject onto black via the mask and validates shapes and
indices; appearance set indices must cover 0..S-1 with no gaps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Camera, RigidTransform
from .skeleton import BodyPose, SkeletonRig


class DatasetError(Exception):
    pass


class MissingDatasetFile(DatasetError):
    pass


class FrameShapeError(DatasetError):
    pass


class AppearanceIndexError(DatasetError):
    pass


class MetadataError(DatasetError):
    pass


@dataclass
class DatasetFrame:
    index: int
    image: np.ndarray  # [H, W, 3] float32 in [0, 1], composited onto black
    mask: np.ndarray  # [H, W] bool, subject pixels
    valid: np.ndarray  # [H, W] bool, pixels allowed in losses
    appearance_set: int
    camera: Camera
    pose: BodyPose
    image_path: str
    mask_path: str
    bbox: tuple  # (x0, y0, x1, y1) of the subject mask


@dataclass
class Dataset:
    directory: Path
    rig: SkeletonRig
    frames: list
    sets: int  # S

    @property
    def frame_count(self) -> int:  # N
        return len(self.frames)


def camera_from_json(d: dict) -> Camera:
    return Camera(np.array(d["intrinsics"]),
                  RigidTransform(np.array(d["rotation"]), np.array(d["translation"])),
                  int(d["width"]), int(d["height"]))


def camera_to_json(camera: Camera) -> dict:
    return {
        "intrinsics": camera.intrinsics.tolist(),
        "rotation": camera.extrinsics.rotation.tolist(),
        "translation": camera.extrinsics.translation.tolist(),
        "width": camera.width,
        "height": camera.height,
    }


def _load_png(path: Path, frame_id: str, mode: str) -> np.ndarray:
    if not path.exists():
        raise MissingDatasetFile(f"{frame_id}: missing file {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert(mode))


def mask_bbox(mask: np.ndarray):
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def load_dataset(directory) -> Dataset:
    root = Path(directory)
    rig_path = root / "rig.json"
    meta_path = root / "metadata.json"
    for p in (rig_path, meta_path):
        if not p.exists():
            raise MissingDatasetFile(f"dataset is missing {p.name} in {root}")
    with open(rig_path) as f:
        rig = SkeletonRig.from_json(json.load(f))
    with open(meta_path) as f:
        records = json.load(f)
    if not isinstance(records, list) or not records:
        raise MetadataError("metadata.json must be a non-empty array of frames")

    frames = []
    set_indices = []
    for i, rec in enumerate(records):
        fid = f"frame {i}"
        try:
            s = int(rec["appearance_set"])
            camera = camera_from_json(rec["camera"])
            pose = BodyPose.from_json(rec["pose"])
            image_rel, mask_rel = rec["image"], rec["mask"]
        except (KeyError, TypeError) as e:
            raise MetadataError(f"{fid}: malformed record ({e})") from None
        if s < 0:
            raise AppearanceIndexError(f"{fid}: appearance_set {s} is negative")
        if pose.bone_count != rig.bone_count:
            raise FrameShapeError(
                f"{fid}: pose has {pose.bone_count} bones, rig has {rig.bone_count}")

        rgb = _load_png(root / image_rel, fid, "RGB").astype(np.float32) / 255.0
        mask_arr = _load_png(root / mask_rel, fid, "L")
        if mask_arr.shape != rgb.shape[:2]:
            raise FrameShapeError(
                f"{fid}: mask {mask_arr.shape} does not match image {rgb.shape[:2]}")
        if rgb.shape[:2] != (camera.height, camera.width):
            raise FrameShapeError(
                f"{fid}: image {rgb.shape[:2]} does not match camera "
                f"{camera.height}x{camera.width}")
        mask = mask_arr > 127
        valid = np.ones_like(mask)
        if rec.get("ignore_mask"):
            ignore = _load_png(root / rec["ignore_mask"], fid, "L")
            if ignore.shape != mask.shape:
                raise FrameShapeError(f"{fid}: ignore mask shape {ignore.shape} mismatched")
            valid &= ignore <= 127
        composited = rgb * mask[..., None]
        bbox = mask_bbox(mask)
        if bbox is None:
            raise FrameShapeError(f"{fid}: subject mask is empty")
        frames.append(DatasetFrame(i, composited, mask, valid, s, camera, pose,
                                   image_rel, mask_rel, bbox))
        set_indices.append(s)

    sets = max(set_indices) + 1
    present = set(set_indices)
    missing = [k for k in range(sets) if k not in present]
    if missing:
        raise AppearanceIndexError(
            f"appearance sets must cover 0..{sets - 1} with no gaps; missing {missing} "
            f"(a frame index at or beyond the set count leaves such a gap)")
    return Dataset(root, rig, frames, sets)
