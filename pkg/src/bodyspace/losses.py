"""Training losses.

Reconstruction (masked MSE plus a perceptual proxy) is computed on seen
patches; the depth-smoothness and opacity regularizers act on renderings
from unseen orbit cameras. The total is
    L = L_perc + l_mse * L_MSE + l_geom * L_geom + l_opacity * L_opacity
with stage-gated terms contributing exactly zero while inactive.

The perceptual term defaults to a pretrained-free proxy: mean absolute
difference of horizontal and vertical image gradients at two dyadic scales.
It is offset-invariant like a contrast feature, and the registry below lets
callers swap in a heavier metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape


@dataclass(frozen=True)
class LossWeights:
    l_mse: float = 0.2
    l_geom: float = 1.0
    l_opacity: float = 10.0
    opacity_eps: float = 1e-3

    def __post_init__(self):
        if self.opacity_eps <= 0:
            raise ValueError("opacity_eps must be positive")
        if min(self.l_mse, self.l_geom, self.l_opacity) < 0:
            raise ValueError("loss weights must be nonnegative")


def loss_mse(rendered, target, valid_mask=None):
    """Mean squared error over valid pixels (all channels).

    rendered/target: [..., H, W, 3]; valid_mask: [..., H, W] or None. With no
    valid pixel the loss is exactly 0 (callers flag that case via
    `valid_fraction`).
    """
    rendered = tape.as_tensor(rendered)
    diff = tape.square(tape.sub(rendered, np.asarray(target, dtype=rendered.dtype)))
    if valid_mask is None:
        return tape.mean_(diff)
    mask = np.asarray(valid_mask, dtype=rendered.dtype)
    count = float(mask.sum()) * 3.0
    if count == 0:
        return tape.as_tensor(np.zeros((), dtype=rendered.dtype))
    masked = tape.mul(diff, mask[..., None])
    return tape.mul(tape.sum_(masked), 1.0 / count)


def valid_fraction(valid_mask) -> float:
    mask = np.asarray(valid_mask)
    return float(mask.mean()) if mask.size else 0.0


def loss_geom(depth, alpha):
    """Alpha-gated depth smoothness over every adjacent pixel pair.

    depth/alpha: [..., H, W]. Sums (A_a A_b (D_a - D_b))^2 over horizontal
    and vertical neighbors, a raw sum (no pair normalization).
    """
    d = tape.as_tensor(depth)
    a = tape.as_tensor(alpha)
    h_pair = tape.mul(tape.mul(a[..., :, :-1], a[..., :, 1:]),
                      tape.sub(d[..., :, :-1], d[..., :, 1:]))
    v_pair = tape.mul(tape.mul(a[..., :-1, :], a[..., 1:, :]),
                      tape.sub(d[..., :-1, :], d[..., 1:, :]))
    return tape.add(tape.sum_(tape.square(h_pair)), tape.sum_(tape.square(v_pair)))


def loss_opacity(alpha, eps: float = 1e-3):
    """Binary-alpha prior: sum of log(A+eps) + log(1-A+eps) - C with
    C = log(eps) + log(1+eps), which is zero exactly at A in {0, 1} and
    positive in between."""
    a = tape.as_tensor(alpha)
    c = float(np.log(eps) + np.log1p(eps))
    per = tape.add(tape.log(tape.add(a, eps)), tape.log(tape.add(tape.sub(1.0, a), eps)))
    return tape.sub(tape.sum_(per), c * a.size)


def _avg_pool2(x):
    """2x2 average pooling of [..., H, W, C] (H, W even)."""
    sh = x.shape
    h, w, c = sh[-3], sh[-2], sh[-1]
    y = tape.reshape(x, sh[:-3] + (h // 2, 2, w // 2, 2, c))
    return tape.mean_(y, axis=(-4, -2))


def _grad_abs_diff(r, t):
    dxr = tape.sub(r[..., :, 1:, :], r[..., :, :-1, :])
    dxt = tape.sub(t[..., :, 1:, :], t[..., :, :-1, :])
    dyr = tape.sub(r[..., 1:, :, :], r[..., :-1, :, :])
    dyt = tape.sub(t[..., 1:, :, :], t[..., :-1, :, :])
    return tape.add(tape.mean_(tape.absval(tape.sub(dxr, dxt))),
                    tape.mean_(tape.absval(tape.sub(dyr, dyt))))


def perceptual_grad2(rendered, target):
    """Image-gradient difference at the native scale and one 2x pooling."""
    r = tape.as_tensor(rendered)
    t = tape.as_tensor(np.asarray(target, dtype=r.dtype))
    if r.shape[-2] < 8 or r.shape[-3] < 8:
        raise ValueError("perceptual proxy needs patches of side >= 8")
    total = _grad_abs_diff(r, t)
    total = tape.add(total, _grad_abs_diff(_avg_pool2(r), _avg_pool2(t)))
    return total


PERCEPTUAL_METRICS = {"grad2": perceptual_grad2}


def loss_perceptual(rendered, target, metric: str = "grad2"):
    try:
        fn = PERCEPTUAL_METRICS[metric]
    except KeyError:
        raise KeyError(f"unknown perceptual metric {metric!r}; "
                       f"registered: {sorted(PERCEPTUAL_METRICS)}") from None
    return fn(rendered, target)


def loss_total(parts: dict, weights: LossWeights, active: dict):
    """Weighted total; parts maps {perc, mse, geom, opacity} to scalar
    tensors (or None). geom/opacity honor the stage flags in `active` and
    contribute exactly 0 while disabled."""
    terms = []
    if parts.get("perc") is not None:
        terms.append(parts["perc"])
    if parts.get("mse") is not None:
        terms.append(tape.mul(parts["mse"], weights.l_mse))
    if parts.get("geom") is not None and active.get("geom", True):
        terms.append(tape.mul(parts["geom"], weights.l_geom))
    if parts.get("opacity") is not None and active.get("opacity", True):
        terms.append(tape.mul(parts["opacity"], weights.l_opacity))
    if not terms:
        return tape.as_tensor(np.zeros(()))
    total = terms[0]
    for t in terms[1:]:
        total = tape.add(total, t)
    return total
