"""The training loop.

Each iteration draws one frame, corrects its pose when that stage is active,
builds the motion bases, renders patches from the seen camera and from an
orbit camera at a uniformly random angle, and takes one Adam step on the
staged total loss. Reconstruction terms supervise seen patches; the
depth-smoothness and opacity terms act on the unseen render, with the
depth-smoothness gradient blocked from the pose network.

Determinism: a single seeded generator drives every random draw in a fixed
order per iteration (frame, orbit angle, patch placement, stratified
jitter), all draws happen whether or not a stage consumes them, and the
generator state rides along in checkpoints, so a resumed run reproduces the
unbroken run's loss log bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tape
from .config import Config
from .dataset import Dataset
from .geometry import orbit_camera, rays_for_pixels
from .losses import (
    LossWeights,
    loss_geom,
    loss_mse,
    loss_opacity,
    loss_perceptual,
    loss_total,
)
from .checkpoint import CheckpointError
from .model import Model, frame_refs_from_dataset, load_model, save_model
from .optim import AdamState, adam_step, stage_active, zero_grads
from .renderer import Scene, patch_pixels, render_rays_t, sample_patches, skeleton_bbox_2d
from .skeleton import BodyPose, motion_bases_t, posed_aabb


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainResult:
    checkpoint: Path
    log: Path
    iterations: int


def _stack_patch_targets(frame, patches):
    imgs, valids = [], []
    for p in patches:
        imgs.append(frame.image[p.y0:p.y0 + p.size, p.x0:p.x0 + p.size])
        valids.append(frame.valid[p.y0:p.y0 + p.size, p.x0:p.x0 + p.size])
    return np.stack(imgs), np.stack(valids)


def _render_patch_batch(scene, camera, patches, subject_box, samples, rng):
    """One fused render over all patches; returns (C, D, A) shaped
    [P, H, H, ...]."""
    pixels = np.concatenate([patch_pixels(p) for p in patches])
    origins, dirs, t0, t1, hit = rays_for_pixels(camera, pixels, subject_box)
    c, d, a = render_rays_t(scene, origins, dirs, t0, t1, hit, samples, rng=rng)
    p, h = len(patches), patches[0].size
    return (tape.reshape(c, (p, h, h, 3)), tape.reshape(d, (p, h, h)),
            tape.reshape(a, (p, h, h)))


def train(dataset: Dataset, config: Config, seed: int, out_dir, resume=None,
          progress_every: int = 0) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    schedule = config.schedule.as_schedule()
    weights = LossWeights(config.loss.l_mse, config.loss.l_geom, config.loss.l_opacity,
                          config.loss.opacity_eps)

    if resume is not None:
        loaded = load_model(resume)
        if loaded.model.config.hash() != config.hash():
            raise CheckpointError(
                f"resume config hash {loaded.model.config.hash()} does not match "
                f"requested config {config.hash()}")
        model = loaded.model
        adam = loaded.adam
        start = loaded.iteration
        rng = np.random.default_rng()
        rng.bit_generator.state = loaded.rng_state
    else:
        model = Model(dataset.rig, dataset.sets, config, seed)
        adam = AdamState(config.optim.beta1, config.optim.beta2, config.optim.delta)
        start = 0
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(4)[3])

    groups = model.param_groups()
    frames = frame_refs_from_dataset(dataset)
    rig = model.rig
    rc = config.render
    samples = rc.samples_per_ray
    log_path = out / "train_log.ndjson"
    log_file = open(log_path, "a" if resume is not None else "w")

    def save(path_name, iteration):
        return save_model(out / path_name, model, frames, iteration, adam,
                          rng_state=rng.bit_generator.state, dataset_dir=dataset.directory)

    try:
        for it in range(start, schedule.total):
            flags = stage_active(schedule, it)
            render_unseen = (flags["geom"] or flags["opacity"]) and \
                (weights.l_geom > 0 or weights.l_opacity > 0)

            # fixed draw order; every draw happens regardless of gating
            frame_idx = int(rng.integers(dataset.frame_count))
            phi = float(rng.uniform(0, 2 * np.pi))
            frame = dataset.frames[frame_idx]
            seen_patches = sample_patches(rng, frame.bbox,
                                          (frame.camera.width, frame.camera.height),
                                          rc.seen_patches, rc.seen_patch_size, "seen", frame_idx)

            # pose branch: bypassed entirely until the stage opens
            base_angles = frame.pose.joint_angles.astype(np.float32)
            delta = None
            if flags["pose"]:
                app_emb, pose_emb = model.tables.lookup_t(frame.appearance_set,
                                                          frame.appearance_set)
                delta = model.pose_net.residual_t(tape.as_tensor(base_angles), pose_emb)
                angles_t = tape.add(tape.as_tensor(base_angles), delta)
            else:
                app_emb, _ = model.tables.lookup_t(frame.appearance_set, frame.appearance_set)
                angles_t = tape.as_tensor(base_angles)
            pose_geometry = BodyPose(frame.pose.root, angles_t.data.astype(np.float64))
            subject_box = posed_aabb(rig, pose_geometry, inflate=rc.subject_box_inflate)

            bases = motion_bases_t(rig, frame.pose.root, angles_t)
            scene = Scene(model.field, model.volume, bases, app_emb)

            c_seen, _, _ = _render_patch_batch(scene, frame.camera, seen_patches,
                                               subject_box, samples, rng)
            targets, valid = _stack_patch_targets(frame, seen_patches)
            parts = {
                "mse": loss_mse(c_seen, targets, valid),
                "perc": loss_perceptual(c_seen, targets, metric=config.loss.perceptual),
                "geom": None,
                "opacity": None,
            }

            orbit = orbit_camera(frame.camera, phi, subject_box.center)
            unseen_patches = sample_patches(rng, skeleton_bbox_2d(orbit, rig, pose_geometry),
                                            (orbit.width, orbit.height), rc.unseen_patches,
                                            rc.unseen_patch_size, "unseen", frame_idx)
            u_pixels = np.concatenate([patch_pixels(p) for p in unseen_patches])
            uo, ud, ut0, ut1, uhit = rays_for_pixels(orbit, u_pixels, subject_box)
            if render_unseen:
                _, d_un, a_un = render_rays_t(scene, uo, ud, ut0, ut1, uhit, samples, rng=rng)
                ph = rc.unseen_patch_size
                d_un = tape.reshape(d_un, (rc.unseen_patches, ph, ph))
                a_un = tape.reshape(a_un, (rc.unseen_patches, ph, ph))
                if flags["geom"] and weights.l_geom > 0:
                    parts["geom"] = loss_geom(d_un, a_un)
                if flags["opacity"] and weights.l_opacity > 0:
                    parts["opacity"] = loss_opacity(a_un, weights.opacity_eps)
            else:
                # consume the exact draws the render would have, so runs that
                # differ only in loss weights see identical frames and patches
                rng.random((int(uhit.sum()), samples))

            values = {
                "mse": float(parts["mse"].data),
                "perc": float(parts["perc"].data),
                "geom": float(parts["geom"].data) if parts["geom"] is not None else 0.0,
                "opacity": float(parts["opacity"].data) if parts["opacity"] is not None else 0.0,
            }
            total_value = (values["perc"] + weights.l_mse * values["mse"]
                           + weights.l_geom * values["geom"]
                           + weights.l_opacity * values["opacity"])
            if not np.isfinite(total_value):
                save("debug_abort.ckpt", it)
                raise TrainingAborted(f"non-finite loss at iteration {it}: {values}")

            # two-pass backward: reconstruction flows everywhere, while the
            # depth-smoothness term (and optionally the opacity term) hits a
            # barrier at the pose residual
            blocked = {"geom"}
            if config.loss.opacity_stops_pose:
                blocked.add("opacity")
            root_a = loss_total({k: (v if k not in blocked else None)
                                 for k, v in parts.items()}, weights, flags)
            tape.backward(root_a)
            barriers = (delta,) if delta is not None else ()
            for name, lam in (("geom", weights.l_geom), ("opacity", weights.l_opacity)):
                if name in blocked and parts[name] is not None:
                    tape.backward(tape.mul(parts[name], lam), barriers=barriers)

            try:
                adam_step(groups, adam)
            except FloatingPointError as e:
                save("debug_abort.ckpt", it)
                raise TrainingAborted(f"{e} at iteration {it}") from None
            zero_grads(groups)

            if it % config.train.log_every == 0:
                rec = {"iteration": it, "frame": frame_idx, "total": total_value, **values}
                log_file.write(json.dumps(rec, sort_keys=True) + "\n")
            if progress_every and it % progress_every == 0:
                print(f"[{it:>7d}/{schedule.total}] total={total_value:.5f} "
                      f"mse={values['mse']:.5f}", flush=True)
            if config.train.checkpoint_every and (it + 1) % config.train.checkpoint_every == 0 \
                    and it + 1 < schedule.total:
                save(f"ckpt_{it + 1:07d}.ckpt", it + 1)
    finally:
        log_file.close()

    final = save("ckpt_final.ckpt", schedule.total)
    return TrainResult(final, log_path, schedule.total - start)
