"""The reconstructed (appearance, body pose, camera view) space.

The space is the unit cube: coordinate a picks an appearance embedding via
floor(a * S), b picks a body pose via floor(b * N) (whose pose embedding
follows the pose's source appearance set, not a), and c orbits the picked
pose's training camera by 2 * pi * c about the up axis through the body
center. Values of exactly 1.0 clamp to the last index since the floor would
overflow there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluate import frame_pose_box
from .geometry import Camera, orbit_camera
from .model import LoadedModel
from .renderer import render_image


@dataclass(frozen=True)
class SpaceCoord:
    a: float
    b: float
    c: float

    def clamped(self) -> "SpaceCoord":
        return SpaceCoord(min(max(self.a, 0.0), 1.0),
                          min(max(self.b, 0.0), 1.0),
                          min(max(self.c, 0.0), 1.0))


@dataclass(frozen=True)
class SpaceIndex:
    appearance: int  # idx_a
    pose: int  # idx_b
    source_set: int  # appearance set the pose came from
    phi: float  # view angle, radians in [0, 2*pi)


def map_coord(coord: SpaceCoord, sets: int, poses: int, source_sets=None) -> SpaceIndex:
    """Cube point -> concrete (appearance, pose, view) selection.

    source_sets: per-pose appearance set indices (defaults to zeros when the
    caller only needs the index arithmetic)."""
    if sets < 1 or poses < 1:
        raise ValueError("need at least one appearance set and one pose")
    c = coord.clamped()
    idx_a = min(int(c.a * sets), sets - 1)
    idx_b = min(int(c.b * poses), poses - 1)
    phi = float((2.0 * np.pi * c.c) % (2.0 * np.pi))
    src = int(source_sets[idx_b]) if source_sets is not None else 0
    return SpaceIndex(idx_a, idx_b, src, phi)


def resize_camera(camera: Camera, width: int, height: int) -> Camera:
    """Same view frustum at another raster resolution."""
    sx = width / camera.width
    sy = height / camera.height
    intr = camera.intrinsics.copy()
    intr[0, :] *= sx
    intr[1, :] *= sy
    return Camera(intr, camera.extrinsics, width, height)


@dataclass
class SpaceRender:
    color: np.ndarray  # [H, W, 3]
    alpha: np.ndarray  # [H, W]
    depth: np.ndarray  # [H, W]
    index: SpaceIndex


def render_space_point(loaded: LoadedModel, coord: SpaceCoord, width: int = None,
                       height: int = None) -> SpaceRender:
    """Render one cube point.

    The appearance embedding follows idx_a while the pose embedding follows
    the pose's source set, so switching appearance never perturbs geometry
    through the pose corrector."""
    model = loaded.model
    source_sets = [fr.appearance_set for fr in loaded.frames]
    idx = map_coord(coord, model.sets, len(loaded.frames), source_sets)
    fr = loaded.frames[idx.pose]

    pose, box = frame_pose_box(loaded, idx.pose)  # correction uses the source set
    camera = orbit_camera(fr.camera, idx.phi, box.center)
    if width or height:
        width = width or camera.width
        height = height or camera.height
        camera = resize_camera(camera, width, height)
    scene = model.render_scene(pose, idx.appearance)
    out = render_image(scene, camera, box, samples=model.config.render.samples_per_ray)
    return SpaceRender(out.color, out.alpha, out.depth, idx)


def sweep_plane(loaded: LoadedModel, plane: str, fixed: float, rows: int, cols: int,
                cell: int = 128):
    """Row-major montage over a 2D slice of the cube.

    plane: app-view | app-pose | pose-view; `fixed` is the remaining
    coordinate. Returns (montage rgb [rows*cell, cols*cell, 3], coords)."""
    axes = {
        "app-view": ("a", "c", "b"),
        "app-pose": ("a", "b", "c"),
        "pose-view": ("b", "c", "a"),
    }
    if plane not in axes:
        raise ValueError(f"unknown plane {plane!r}; choose from {sorted(axes)}")
    row_axis, col_axis, fixed_axis = axes[plane]
    montage = np.zeros((rows * cell, cols * cell, 3), dtype=np.float32)
    coords = []
    for r in range(rows):
        for q in range(cols):
            vals = {fixed_axis: fixed}
            # cell centers avoid the floor-boundary ambiguity on index axes
            vals[row_axis] = (r + 0.5) / rows
            vals[col_axis] = (q + 0.5) / cols
            coord = SpaceCoord(vals["a"], vals["b"], vals["c"])
            out = render_space_point(loaded, coord, cell, cell)
            montage[r * cell:(r + 1) * cell, q * cell:(q + 1) * cell] = out.color
            coords.append(coord)
    return montage, coords
