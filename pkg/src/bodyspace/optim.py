"""Adam with per-group learning rates, and the staged training schedule.

Groups follow the training setup: 5e-4 for the canonical field and both
embedding tables, 5e-5 for everything else (weight-volume logits, pose
network). Adam uses beta1 = 0.9, beta2 = 0.99 and a 1e-8 guard.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape

LR_FIELD = 5e-4
LR_EMBED = 5e-4
LR_OTHER = 5e-5
BETA1 = 0.9
BETA2 = 0.99
ADAM_DELTA = 1e-8


@dataclass
class ParamGroup:
    name: str
    params: list
    lr: float

    def __post_init__(self):
        names = [p.name for p in self.params]
        if any(n is None for n in names) or len(set(names)) != len(names):
            raise ValueError(f"group {self.name}: every parameter needs a unique name")


def default_groups(field_params, volume_params, pose_params, embed_params,
                   lr_field=LR_FIELD, lr_embed=LR_EMBED, lr_other=LR_OTHER):
    return [
        ParamGroup("field", field_params, lr_field),
        ParamGroup("volume", volume_params, lr_other),
        ParamGroup("pose", pose_params, lr_other),
        ParamGroup("embed", embed_params, lr_embed),
    ]


class AdamState:
    """First/second moments keyed by parameter name, plus the step counter."""

    def __init__(self, beta1: float = BETA1, beta2: float = BETA2, delta: float = ADAM_DELTA):
        self.beta1 = beta1
        self.beta2 = beta2
        self.delta = delta
        self.m = {}
        self.v = {}
        self.t = 0


def adam_step(groups, state: AdamState):
    """One bias-corrected update over every group; missing grads count as zero.

    Raises FloatingPointError on non-finite gradients so the caller can abort
    the step (nothing is mutated in that case).
    """
    for group in groups:
        for p in group.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient on {p.name}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for group in groups:
        for p in group.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if p.name not in state.m:
                state.m[p.name] = np.zeros_like(p.data)
                state.v[p.name] = np.zeros_like(p.data)
            m, v = state.m[p.name], state.v[p.name]
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= (group.lr * mhat / (np.sqrt(vhat) + state.delta)).astype(p.data.dtype, copy=False)


def zero_grads(groups):
    for group in groups:
        for p in group.params:
            p.zero_grad()


@dataclass(frozen=True)
class StageSchedule:
    """Iteration delays before pose refinement, the geometry loss, and the
    opacity loss become active (inclusive thresholds)."""

    pose_delay: int
    geom_delay: int
    opacity_delay: int
    total: int

    def __post_init__(self):
        for d in (self.pose_delay, self.geom_delay, self.opacity_delay):
            if not (0 <= d <= self.total):
                raise ValueError("delays must lie within the run")

    @staticmethod
    def single_network(total: int = 600_000) -> "StageSchedule":
        return StageSchedule(1_000, 10_000, 200_000, total)

    @staticmethod
    def separate_network(total: int = 200_000) -> "StageSchedule":
        return StageSchedule(1_000, 1_000, 50_000, total)

    @staticmethod
    def desk(total: int) -> "StageSchedule":
        """Proportional desk-scale schedule: 0.5% / 5% / 33% of the run."""
        return StageSchedule(round(0.005 * total), round(0.05 * total), round(0.33 * total), total)

    def scaled(self, new_total: int) -> "StageSchedule":
        f = new_total / self.total
        return StageSchedule(round(self.pose_delay * f), round(self.geom_delay * f),
                             round(self.opacity_delay * f), new_total)


def stage_active(schedule: StageSchedule, iteration: int) -> dict:
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return {
        "pose": iteration >= schedule.pose_delay,
        "geom": iteration >= schedule.geom_delay,
        "opacity": iteration >= schedule.opacity_delay,
    }
