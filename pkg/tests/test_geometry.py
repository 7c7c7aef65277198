import math

import numpy as np
import pytest

from bodyspace.geometry import (
    Aabb,
    Camera,
    Ray,
    RigidTransform,
    look_at_camera,
    orbit_camera,
    pixel_to_ray,
    positional_encoding,
    projected_bbox_2d,
    ray_aabb,
    rays_for_pixels,
    rotation_about_axis,
)

rng = np.random.default_rng(11)


def random_rigid(rg):
    axis = rg.standard_normal(3)
    angle = rg.uniform(-np.pi, np.pi)
    return RigidTransform(rotation_about_axis(axis, angle), rg.standard_normal(3))


class TestRigidTransform:
    def test_compose_inverse_is_identity(self):
        for _ in range(20):
            t = random_rigid(rng)
            ident = t.compose(t.inverse())
            assert np.abs(ident.rotation - np.eye(3)).max() < 1e-5
            assert np.abs(ident.translation).max() < 1e-5

    def test_rotations_orthonormal(self):
        for _ in range(20):
            t = random_rigid(rng)
            assert t.is_valid_rotation()

    def test_apply_matches_matrix_form(self):
        t = random_rigid(rng)
        pts = rng.standard_normal((7, 3))
        expected = (t.rotation @ pts.T).T + t.translation
        assert np.allclose(t.apply(pts), expected)


class TestPositionalEncoding:
    def test_zero_gives_alternating_pattern(self):
        out = positional_encoding((0.0, 0.0, 0.0), bands=4)
        assert out.shape == (24,)
        assert np.allclose(out[0::2], 0.0)  # sines
        assert np.allclose(out[1::2], 1.0)  # cosines

    def test_half_gives_unit_sine(self):
        out = positional_encoding((0.5, 0.0, 0.0), bands=1)
        assert abs(out[0] - 1.0) < 1e-12  # sin(pi/2)
        assert abs(out[1] - 0.0) < 1e-12  # cos(pi/2)

    def test_matches_scalar_bruteforce_oracle(self):
        x = (0.3, -0.2, 0.7)
        out = positional_encoding(x, bands=10)
        col = 0
        for k in range(10):
            for c in range(3):
                ang = (2.0 ** k) * math.pi * x[c]
                assert abs(out[col] - math.sin(ang)) < 1e-12
                assert abs(out[col + 1] - math.cos(ang)) < 1e-12
                col += 2

    def test_range_bounded(self):
        for _ in range(50):
            out = positional_encoding(rng.standard_normal(3) * 3, bands=6)
            assert np.all(out >= -1.0) and np.all(out <= 1.0)

    def test_rejects_zero_bands(self):
        with pytest.raises(ValueError):
            positional_encoding((0.0, 0.0, 0.0), bands=0)


def slab_oracle(origin, direction, lo, hi):
    """Independent slab test written long-hand for verification."""
    t0, t1 = -np.inf, np.inf
    for a in range(3):
        if direction[a] == 0:
            if origin[a] < lo[a] or origin[a] > hi[a]:
                return None
            continue
        ta = (lo[a] - origin[a]) / direction[a]
        tb = (hi[a] - origin[a]) / direction[a]
        ta, tb = min(ta, tb), max(ta, tb)
        t0, t1 = max(t0, ta), min(t1, tb)
    if t0 >= t1 or t1 <= 0:
        return None
    return max(t0, 0.0), t1


def default_camera(width=64, height=48, focal=50.0):
    intr = np.array([[focal, 0, width / 2], [0, focal, height / 2], [0, 0, 1.0]])
    return Camera(intr, RigidTransform.identity(), width, height)


class TestPixelToRay:
    box = Aabb(np.array([-1.0, -1.0, 3.0]), np.array([1.0, 1.0, 5.0]))

    def test_principal_point_gives_forward_axis(self):
        cam = default_camera()
        # pixel whose center is the principal point
        ray = pixel_to_ray(cam, (cam.width // 2 - 0.5 + 0.0, cam.height // 2 - 0.5), self.box)
        # +0.5 center offset: pass the pixel at (W/2 - 0.5, H/2 - 0.5)
        assert ray is not None
        assert np.allclose(ray.direction, [0, 0, 1], atol=1e-12)

    def test_miss_returns_none(self):
        cam = default_camera()
        assert pixel_to_ray(cam, (0, 0), self.box) is None  # corner ray misses small box

    def test_matches_slab_oracle(self):
        cam = default_camera()
        box = Aabb(np.array([-0.4, -0.3, 3.0]), np.array([0.5, 0.4, 4.2]))
        hits = 0
        for i in range(200):
            if i % 2 == 0:  # bias half the draws toward the projected box
                px = (rng.integers(24, 40), rng.integers(16, 32))
            else:
                px = (rng.integers(0, cam.width), rng.integers(0, cam.height))
            ray = pixel_to_ray(cam, px, box)
            origins, dirs, *_ = rays_for_pixels(cam, np.array([px]), box)
            oracle = slab_oracle(origins[0], dirs[0], box.lo, box.hi)
            if ray is None:
                assert oracle is None
            else:
                hits += 1
                assert oracle is not None
                assert abs(ray.t_near - oracle[0]) < 1e-6
                assert abs(ray.t_far - oracle[1]) < 1e-6
        assert hits > 10

    def test_directions_unit_norm(self):
        cam = default_camera()
        px = np.stack([rng.integers(0, cam.width, 100), rng.integers(0, cam.height, 100)], axis=1)
        _, dirs, *_ = rays_for_pixels(cam, px, self.box)
        assert np.abs(np.linalg.norm(dirs, axis=1) - 1.0).max() < 1e-6

    def test_ray_aabb_scalar_agrees(self):
        for _ in range(100):
            o = rng.standard_normal(3) * 2
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            box = Aabb(np.array([-0.5, -0.5, -0.5]), np.array([0.5, 0.5, 0.5]))
            got = ray_aabb(o, d, box)
            want = slab_oracle(o, d, box.lo, box.hi)
            if want is None:
                assert got is None
            else:
                assert got is not None
                assert np.allclose(got, want, atol=1e-9)

    def test_out_of_image_pixel_rejected(self):
        cam = default_camera()
        with pytest.raises(ValueError):
            pixel_to_ray(cam, (cam.width, 0), self.box)


class TestOrbitCamera:
    def setup_method(self):
        self.cam = look_at_camera(eye=[0, 0.5, -3.0], target=[0, 0.5, 0], focal=60, width=64, height=64)
        self.center = np.array([0.0, 0.5, 0.0])

    def test_phi_zero_is_identity(self):
        out = orbit_camera(self.cam, 0.0, self.center)
        assert np.allclose(out.extrinsics.rotation, self.cam.extrinsics.rotation)
        assert np.allclose(out.extrinsics.translation, self.cam.extrinsics.translation)

    def test_full_turn_returns(self):
        out = orbit_camera(self.cam, 2 * np.pi, self.center)
        assert np.abs(out.extrinsics.rotation - self.cam.extrinsics.rotation).max() < 1e-5
        assert np.abs(out.extrinsics.translation - self.cam.extrinsics.translation).max() < 1e-5

    def test_half_turn_reflects_position(self):
        # oracle: compose the rotation matrices explicitly
        phi = np.pi
        rot = rotation_about_axis([0, 1, 0], phi)
        expected_pos = rot @ (self.cam.center - self.center) + self.center
        out = orbit_camera(self.cam, phi, self.center)
        assert np.allclose(out.center, expected_pos, atol=1e-9)
        d0 = np.linalg.norm((self.cam.center - self.center) * [1, 0, 1])
        d1 = np.linalg.norm((out.center - self.center) * [1, 0, 1])
        assert abs(d0 - d1) < 1e-9

    def test_axis_distance_preserved_for_all_phi(self):
        for _ in range(32):
            phi = rng.uniform(0, 2 * np.pi)
            out = orbit_camera(self.cam, phi, self.center)
            rel0 = self.cam.center - self.center
            rel1 = out.center - self.center
            # distance to the vertical axis line through the body center
            d0 = np.hypot(rel0[0], rel0[2])
            d1 = np.hypot(rel1[0], rel1[2])
            assert abs(d0 - d1) < 1e-5
            assert abs(rel0[1] - rel1[1]) < 1e-5  # height above center preserved

    def test_intrinsics_unchanged(self):
        out = orbit_camera(self.cam, 1.234, self.center)
        assert np.allclose(out.intrinsics, self.cam.intrinsics)
        assert out.width == self.cam.width and out.height == self.cam.height

    def test_unnormalized_up_rejected(self):
        with pytest.raises(ValueError):
            orbit_camera(self.cam, 0.5, self.center, up=[0, 2, 0])


class TestCameraValidation:
    def test_negative_focal_rejected(self):
        intr = np.array([[-50, 0, 32], [0, 50, 32], [0, 0, 1.0]])
        with pytest.raises(ValueError):
            Camera(intr, RigidTransform.identity(), 64, 64)

    def test_tiny_image_rejected(self):
        intr = np.eye(3) * [50, 50, 1]
        with pytest.raises(ValueError):
            Camera(intr, RigidTransform.identity(), 0, 64)

    def test_ray_validation(self):
        with pytest.raises(ValueError):
            Ray(np.zeros(3), np.array([0, 0, 2.0]), 0.1, 1.0)
        with pytest.raises(ValueError):
            Ray(np.zeros(3), np.array([0, 0, 1.0]), 1.0, 0.5)


def test_projected_bbox_contains_points():
    cam = look_at_camera(eye=[0, 0, -4.0], target=[0, 0, 0], focal=80, width=96, height=96)
    pts = rng.uniform(-0.5, 0.5, (20, 3))
    bbox = projected_bbox_2d(cam, pts)
    assert bbox is not None
    x0, y0, x1, y1 = bbox
    uv = cam.project(pts)
    assert np.all(uv[:, 0] >= x0 - 1) and np.all(uv[:, 0] <= x1)
    assert np.all(uv[:, 1] >= y0 - 1) and np.all(uv[:, 1] <= y1)
