"""Evaluation: PSNR on training views, alpha-mask IoU against oracle renders
on held-out orbit views (synthetic data only), a 10-degree view sweep for
visual inspection, and the mean depth-smoothness score on unseen views used
by the regularization ablation.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import orbit_camera
from .losses import loss_geom
from .model import LoadedModel
from .renderer import render_image
from .skeleton import posed_aabb
from .synthetic import load_gen_spec, oracle_orbit_view

PSNR_CAP = 99.0  # sentinel for identical images (mse below 1e-10)


def psnr(a, b) -> float:
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def mask_iou(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def frame_pose_box(loaded: LoadedModel, frame_index: int, apply_pose_correction=True):
    """Corrected pose and its inflated subject box for one checkpointed frame."""
    model = loaded.model
    fr = loaded.frames[frame_index]
    sched = model.config.schedule.as_schedule()
    correct = apply_pose_correction and loaded.iteration >= sched.pose_delay
    pose = model.corrected_pose(fr.pose, fr.appearance_set, apply_correction=correct)
    box = posed_aabb(model.rig, pose, inflate=model.config.render.subject_box_inflate)
    return pose, box


def render_frame(loaded: LoadedModel, frame_index: int, camera=None,
                 appearance_set=None, apply_pose_correction=True):
    """Full render of a checkpointed frame, optionally from another camera or
    with another set's appearance embedding."""
    model = loaded.model
    fr = loaded.frames[frame_index]
    pose, box = frame_pose_box(loaded, frame_index, apply_pose_correction)
    scene = model.render_scene(pose, fr.appearance_set if appearance_set is None else appearance_set)
    cam = camera if camera is not None else fr.camera
    return render_image(scene, cam, box, samples=model.config.render.samples_per_ray), pose, box


def training_view_metrics(loaded: LoadedModel, dataset, frame_indices=None) -> dict:
    """PSNR and mask IoU of renders against the training images."""
    idxs = list(range(len(loaded.frames))) if frame_indices is None else list(frame_indices)
    rows = []
    for i in idxs:
        out, _, _ = render_frame(loaded, i)
        frame = dataset.frames[i]
        rows.append({
            "frame": i,
            "psnr": psnr(out.color, frame.image),
            "mask_iou": mask_iou(out.alpha > 0.5, frame.mask),
        })
    return {
        "per_frame": rows,
        "psnr_mean": float(np.mean([r["psnr"] for r in rows])),
        "iou_mean": float(np.mean([r["mask_iou"] for r in rows])),
    }


def heldout_orbit_metrics(loaded: LoadedModel, dataset, phi: float = np.pi / 2,
                          frame_indices=None) -> dict:
    """Model vs oracle on orbit cameras never seen in training.

    Only available for generator datasets (the oracle re-renders ground truth
    at the orbited camera)."""
    gen = load_gen_spec(dataset.directory)
    if gen is None:
        raise ValueError("held-out orbit evaluation needs a generator dataset (gen_spec.json)")
    _, albedos = gen
    idxs = list(range(len(loaded.frames))) if frame_indices is None else list(frame_indices)
    rows = []
    for i in idxs:
        pose, box = frame_pose_box(loaded, i)
        cam = orbit_camera(loaded.frames[i].camera, phi, box.center)
        out, pose, _ = render_frame(loaded, i, camera=cam)
        gt_rgb, gt_mask, _ = oracle_orbit_view(loaded.model.rig, pose, cam,
                                               albedos[loaded.frames[i].appearance_set])
        rows.append({
            "frame": i,
            "phi": float(phi),
            "psnr": psnr(out.color, gt_rgb),
            "mask_iou": mask_iou(out.alpha > 0.5, gt_mask),
        })
    return {
        "per_frame": rows,
        "psnr_mean": float(np.mean([r["psnr"] for r in rows])),
        "iou_mean": float(np.mean([r["mask_iou"] for r in rows])),
    }


def unseen_geom_score(loaded: LoadedModel, frame_indices=None, seed: int = 0) -> float:
    """Mean depth-smoothness value (raw per-view sum) over seeded orbit views."""
    rng = np.random.default_rng(seed)
    idxs = list(range(len(loaded.frames))) if frame_indices is None else list(frame_indices)
    vals = []
    for i in idxs:
        phi = float(rng.uniform(0, 2 * np.pi))
        _, box = frame_pose_box(loaded, i)
        cam = orbit_camera(loaded.frames[i].camera, phi, box.center)
        out, _, _ = render_frame(loaded, i, camera=cam)
        vals.append(float(loss_geom(out.depth.astype(np.float64),
                                    out.alpha.astype(np.float64)).data))
    return float(np.mean(vals))


def save_png(path, rgb=None, alpha=None, bits=8):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if rgb is not None:
        arr = np.clip(np.asarray(rgb), 0, 1)
        if alpha is not None:
            a = np.clip(np.asarray(alpha), 0, 1)
            rgba = np.concatenate([arr, a[..., None]], axis=-1)
            Image.fromarray(np.round(rgba * 255).astype(np.uint8), "RGBA").save(path)
        else:
            Image.fromarray(np.round(arr * 255).astype(np.uint8)).save(path)
    elif alpha is not None:
        a = np.clip(np.asarray(alpha), 0, 1)
        if bits == 16:
            Image.fromarray(np.round(a * 65535).astype(np.uint16)).save(path)
        else:
            Image.fromarray(np.round(a * 255).astype(np.uint8), "L").save(path)
    else:
        raise ValueError("nothing to save")


def emit_view_sweep(loaded: LoadedModel, frame_index: int, out_dir,
                    step_degrees: float = 10.0) -> list:
    """Render the frame from `step_degrees` camera increments; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    angles = np.arange(0.0, 360.0, step_degrees)
    _, box = frame_pose_box(loaded, frame_index)
    for deg in angles:
        phi = np.deg2rad(deg)
        cam = orbit_camera(loaded.frames[frame_index].camera, phi, box.center)
        view, _, _ = render_frame(loaded, frame_index, camera=cam)
        p = out / f"sweep_f{frame_index:03d}_{int(round(deg)):03d}.png"
        save_png(p, rgb=view.color, alpha=view.alpha)
        paths.append(p)
    return paths


def evaluate(loaded: LoadedModel, dataset, sweep_dir=None, heldout_phi: float = np.pi / 2,
             frame_indices=None, sweep_frame: int = 0) -> dict:
    """Full metrics report; includes held-out orbit scores for generator data."""
    report = {
        "iteration": loaded.iteration,
        "config_hash": loaded.model.config.hash(),
        "training_views": training_view_metrics(loaded, dataset, frame_indices),
    }
    if load_gen_spec(dataset.directory) is not None:
        report["heldout_orbit"] = heldout_orbit_metrics(loaded, dataset, heldout_phi,
                                                        frame_indices)
    if sweep_dir is not None:
        paths = emit_view_sweep(loaded, sweep_frame, sweep_dir)
        report["sweep"] = [str(p) for p in paths]
    return report


def write_report(report: dict, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(report, f, indent=2)
    return path
