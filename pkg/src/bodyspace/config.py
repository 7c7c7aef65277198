"""Run configuration: model, volume, rendering, losses, optimizer, schedule.

Defaults follow the full-scale training recipe (128 ray samples, width-256
field, 6x32 seen and 16x8 unseen patches, single-network stage delays).
`Config.desk()` is the reduced desk-scale preset used by the synthetic
experiments. The canonical JSON encoding below feeds the config hash that
checkpoints pin for resume safety.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

from .optim import StageSchedule


@dataclass(frozen=True)
class ModelConfig:
    width: int = 256
    depth: int = 8
    skip_layer: int = 5
    bands: int = 10
    app_embed_dim: int = 256
    pose_embed_dim: int = 16
    pose_net_width: int = 256
    density_scale: float = 1.0
    density_activation: str = "relu"  # relu | softplus
    density_prior_gain: float = 0.0  # > 0 biases density toward rest capsules


@dataclass(frozen=True)
class VolumeConfig:
    resolution: int = 32
    box_inflate: float = 1.5
    fg_gain: float = 2.0


@dataclass(frozen=True)
class RenderConfig:
    samples_per_ray: int = 128
    subject_box_inflate: float = 1.25
    seen_patches: int = 6
    seen_patch_size: int = 32
    unseen_patches: int = 16
    unseen_patch_size: int = 8


@dataclass(frozen=True)
class LossConfig:
    l_mse: float = 0.2
    l_geom: float = 1.0
    l_opacity: float = 10.0
    opacity_eps: float = 1e-3
    perceptual: str = "grad2"
    # the depth-smoothness term always stops gradients through the pose
    # corrector; this extends the same barrier to the opacity term
    opacity_stops_pose: bool = False


@dataclass(frozen=True)
class OptimConfig:
    lr_field: float = 5e-4
    lr_embed: float = 5e-4
    lr_other: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.99
    delta: float = 1e-8


@dataclass(frozen=True)
class ScheduleConfig:
    pose_delay: int = 1_000
    geom_delay: int = 10_000
    opacity_delay: int = 200_000
    total: int = 600_000

    def as_schedule(self) -> StageSchedule:
        return StageSchedule(self.pose_delay, self.geom_delay, self.opacity_delay, self.total)


@dataclass(frozen=True)
class TrainSettings:
    checkpoint_every: int = 2_000
    log_every: int = 1


@dataclass(frozen=True)
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    volume: VolumeConfig = field(default_factory=VolumeConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainSettings = field(default_factory=TrainSettings)

    @staticmethod
    def desk(total: int = 20_000) -> "Config":
        """Desk-scale preset: width-64 field, 16^3 weight grid, 64 samples
        per ray, stage delays at 0.5% / 5% / 33% of the run."""
        sched = StageSchedule.desk(total)
        return Config(
            model=ModelConfig(width=64),
            volume=VolumeConfig(resolution=16),
            render=RenderConfig(samples_per_ray=64),
            schedule=ScheduleConfig(sched.pose_delay, sched.geom_delay, sched.opacity_delay, total),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    @staticmethod
    def from_dict(d: dict) -> "Config":
        sections = {
            "model": ModelConfig, "volume": VolumeConfig, "render": RenderConfig,
            "loss": LossConfig, "optim": OptimConfig, "schedule": ScheduleConfig,
            "train": TrainSettings,
        }
        kwargs = {}
        for key, cls in sections.items():
            if key in d:
                kwargs[key] = cls(**d[key])
        unknown = set(d) - set(sections)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        return Config(**kwargs)

    @staticmethod
    def from_json_file(path) -> "Config":
        with open(path) as f:
            return Config.from_dict(json.load(f))

    def override(self, **section_updates) -> "Config":
        """Replace whole sections, e.g. cfg.override(model=ModelConfig(width=32))."""
        return replace(self, **section_updates)
