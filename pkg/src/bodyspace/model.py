"""The trainable model bundle and its checkpoint round trip.

A Model owns every parameter group: the canonical field, the shared motion
weight volume logits, the pose correction network, and both embedding
tables. Checkpoints add the optimizer moments, iteration counter, RNG state,
and the dataset context (rig, per-frame cameras/poses/set indices) so that
rendering and serving need only the checkpoint file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tape
from .canonical_field import CanonicalNet, EmbeddingTables, capsule_density_prior
from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    rng_state_from_json,
    rng_state_to_json,
    save_checkpoint,
)
from .config import Config
from .dataset import Dataset, camera_from_json, camera_to_json
from .geometry import Camera
from .motion_field import MotionWeightVolume
from .optim import AdamState, default_groups
from .renderer import Scene
from .skeleton import BodyPose, PoseCorrectionNet, SkeletonRig, bases_from_transforms, motion_bases


@dataclass
class FrameRef:
    """Dataset context a checkpoint keeps per frame (no pixels)."""

    appearance_set: int
    camera: Camera
    pose: BodyPose
    image: str
    mask: str


def frame_refs_from_dataset(dataset: Dataset):
    return [FrameRef(f.appearance_set, f.camera, f.pose, f.image_path, f.mask_path)
            for f in dataset.frames]


class Model:
    def __init__(self, rig: SkeletonRig, sets: int, config: Config, seed: int):
        self.rig = rig
        self.sets = sets
        self.config = config
        seeds = np.random.SeedSequence(seed).spawn(3)
        m = config.model
        self.volume = MotionWeightVolume.from_rig(
            rig, resolution=config.volume.resolution, inflate=config.volume.box_inflate,
            dtype=np.float32, fg_gain=config.volume.fg_gain)
        prior = capsule_density_prior(rig, m.density_prior_gain) \
            if m.density_prior_gain > 0 else None
        self.field = CanonicalNet(np.random.default_rng(seeds[0]), self.volume.box,
                                  width=m.width, depth=m.depth, skip_layer=m.skip_layer,
                                  bands=m.bands, embed_dim=m.app_embed_dim, dtype=np.float32,
                                  density_scale=m.density_scale,
                                  density_activation=m.density_activation,
                                  density_prior=prior)
        self.pose_net = PoseCorrectionNet(rig.bone_count, np.random.default_rng(seeds[1]),
                                          dtype=np.float32, embed_dim=m.pose_embed_dim,
                                          width=m.pose_net_width)
        self.tables = EmbeddingTables(sets, np.random.default_rng(seeds[2]),
                                      app_dim=m.app_embed_dim, pose_dim=m.pose_embed_dim,
                                      dtype=np.float32)

    def param_groups(self):
        o = self.config.optim
        return default_groups(self.field.param_list(), [self.volume.logits],
                              self.pose_net.param_list(), self.tables.param_list(),
                              lr_field=o.lr_field, lr_embed=o.lr_embed, lr_other=o.lr_other)

    def named_tensors(self) -> dict:
        out = {}
        for group in self.param_groups():
            for p in group.params:
                out[p.name] = p
        return out

    def load_tensor_data(self, tensors: dict):
        own = self.named_tensors()
        missing = set(own) - set(tensors)
        if missing:
            raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)}")
        for name, param in own.items():
            arr = tensors[name]
            if tuple(arr.shape) != tuple(param.data.shape):
                raise CheckpointError(
                    f"tensor {name} has shape {arr.shape}, expected {param.data.shape}")
            param.data = arr.astype(np.float32, copy=True)

    def corrected_pose(self, pose: BodyPose, set_index: int, apply_correction=True) -> BodyPose:
        if not apply_correction:
            return pose
        pose_embed = self.tables.pose.data[set_index]
        delta = self.pose_net.residual(pose.joint_angles, pose_embed)
        return BodyPose(pose.root, pose.joint_angles + delta)

    def render_scene(self, pose: BodyPose, appearance_set: int) -> Scene:
        """Detached Scene (constant bases/embedding) for evaluation renders."""
        bases = bases_from_transforms(motion_bases(self.rig, pose), dtype=np.float32)
        app = tape.as_tensor(self.tables.app.data[appearance_set].copy())
        return Scene(self.field, self.volume, bases, app)


def build_model_for_dataset(dataset: Dataset, config: Config, seed: int) -> Model:
    return Model(dataset.rig, dataset.sets, config, seed)


def checkpoint_meta(model: Model, frames, iteration: int, adam: AdamState,
                    rng_state=None, dataset_dir=None, extra=None) -> dict:
    meta = {
        "iteration": iteration,
        "config": model.config.to_dict(),
        "config_hash": model.config.hash(),
        "sets": model.sets,
        "rig": model.rig.to_json(),
        "volume_box": {"lo": model.volume.box.lo.tolist(), "hi": model.volume.box.hi.tolist()},
        "adam": {"t": adam.t, "beta1": adam.beta1, "beta2": adam.beta2, "delta": adam.delta},
        "rng_state": rng_state_to_json(rng_state) if rng_state else None,
        "dataset_dir": str(dataset_dir) if dataset_dir else None,
        "frames": [{
            "appearance_set": fr.appearance_set,
            "camera": camera_to_json(fr.camera),
            "pose": fr.pose.to_json(),
            "image": fr.image,
            "mask": fr.mask,
        } for fr in frames],
    }
    if extra:
        meta.update(extra)
    return meta


def save_model(path, model: Model, frames, iteration: int, adam: AdamState,
               rng_state=None, dataset_dir=None, extra=None) -> Path:
    tensors = {name: p.data for name, p in model.named_tensors().items()}
    for name, m in adam.m.items():
        tensors[f"adam.m.{name}"] = m
        tensors[f"adam.v.{name}"] = adam.v[name]
    meta = checkpoint_meta(model, frames, iteration, adam, rng_state, dataset_dir, extra)
    return save_checkpoint(path, meta, tensors)


@dataclass
class LoadedModel:
    model: Model
    frames: list
    iteration: int
    adam: AdamState
    rng_state: dict | None
    meta: dict

    @property
    def frame_count(self):
        return len(self.frames)


def load_model(path) -> LoadedModel:
    meta, tensors = load_checkpoint(path)
    config = Config.from_dict(meta["config"])
    if config.hash() != meta["config_hash"]:
        raise CheckpointError("checkpoint config hash does not match its config payload")
    rig = SkeletonRig.from_json(meta["rig"])
    model = Model(rig, int(meta["sets"]), config, seed=0)
    model.load_tensor_data(tensors)
    adam_meta = meta["adam"]
    adam = AdamState(adam_meta["beta1"], adam_meta["beta2"], adam_meta["delta"])
    adam.t = int(adam_meta["t"])
    for name in model.named_tensors():
        mk, vk = f"adam.m.{name}", f"adam.v.{name}"
        if mk in tensors:
            adam.m[name] = tensors[mk].copy()
            adam.v[name] = tensors[vk].copy()
    frames = [FrameRef(int(fr["appearance_set"]), camera_from_json(fr["camera"]),
                       BodyPose.from_json(fr["pose"]), fr["image"], fr["mask"])
              for fr in meta["frames"]]
    rng_state = rng_state_from_json(meta["rng_state"]) if meta.get("rng_state") else None
    return LoadedModel(model, frames, int(meta["iteration"]), adam, rng_state, meta)
