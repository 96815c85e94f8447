import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpw import geometry as geo
from fpw.geometry import (
    DegenerateFrameError,
    FisheyeCamera,
    PatchSpec,
    build_warp_lut,
    fisheye_to_ray,
    incidence_angle,
    patch_pixel_to_ray,
    ray_to_fisheye,
    ray_to_patch_pixel,
    view_frame,
    warp_patch,
)


def default_spec(phi2=0.0):
    return PatchSpec(phi1=np.radians(36), phi2=phi2, alpha_x=np.radians(48),
                     alpha_y=np.radians(96), width_px=152, height_px=304)


class TestIncidenceAngle:
    def test_center(self, cam):
        assert incidence_angle(0.0, cam) == 0.0

    def test_boundary(self, cam):
        assert incidence_angle(cam.radius, cam) == pytest.approx(np.pi / 2)

    def test_linear(self, cam):
        assert incidence_angle(cam.radius / 2, cam) == pytest.approx(np.pi / 4)

    def test_domain(self, cam):
        with pytest.raises(ValueError):
            incidence_angle(-1.0, cam)
        with pytest.raises(ValueError):
            incidence_angle(cam.radius + 1.0, cam)

    @given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
    def test_strictly_increasing(self, a, b):
        cam = FisheyeCamera(512, 512, 512, np.pi / 2)
        ra, rb = sorted([a * cam.radius, b * cam.radius])
        if ra < rb:
            assert incidence_angle(ra, cam) < incidence_angle(rb, cam)


class TestViewFrame:
    def test_horizontal_axis(self):
        f = view_frame(np.pi / 2, 0.0)
        np.testing.assert_allclose(f.z_axis, [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(f.x_axis, [0, 1, 0], atol=1e-12)
        np.testing.assert_allclose(f.y_axis, [0, 0, 1], atol=1e-12)

    def test_36deg(self):
        f = view_frame(np.radians(36), 0.0)
        np.testing.assert_allclose(
            f.z_axis, [np.sin(np.radians(36)), 0, np.cos(np.radians(36))],
            atol=1e-12)
        assert f.z_axis[0] == pytest.approx(0.5878, abs=1e-4)
        assert f.z_axis[2] == pytest.approx(0.8090, abs=1e-4)

    def test_phi2_rotation(self):
        a = view_frame(np.radians(36), 0.0)
        b = view_frame(np.radians(36), np.radians(45))
        c, s = np.cos(np.radians(45)), np.sin(np.radians(45))
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        for axa, axb in [(a.x_axis, b.x_axis), (a.y_axis, b.y_axis),
                         (a.z_axis, b.z_axis)]:
            np.testing.assert_allclose(rot @ axa, axb, atol=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateFrameError):
            view_frame(0.0, 0.0)
        with pytest.raises(DegenerateFrameError):
            view_frame(np.pi, 1.0)
        with pytest.raises(DegenerateFrameError):
            view_frame(np.radians(0.4), 0.0)

    @given(st.floats(np.radians(1), np.pi - np.radians(1)),
           st.floats(-10.0, 10.0))
    def test_orthonormal_right_handed(self, phi1, phi2):
        f = view_frame(phi1, phi2)
        for ax in (f.x_axis, f.y_axis, f.z_axis):
            assert abs(np.linalg.norm(ax) - 1) < 1e-9
        assert abs(f.x_axis @ f.y_axis) < 1e-9
        assert abs(f.y_axis @ f.z_axis) < 1e-9
        assert abs(f.x_axis @ f.z_axis) < 1e-9
        np.testing.assert_allclose(np.cross(f.x_axis, f.y_axis), f.z_axis,
                                   atol=1e-9)


class TestPatchPixelToRay:
    def test_center_is_view_axis(self):
        spec = default_spec()
        np.testing.assert_allclose(patch_pixel_to_ray(0.0, 0.0, spec),
                                   spec.frame.z_axis, atol=1e-12)

    def test_horizontal_edge(self):
        spec = default_spec()
        expect = spec.frame.z_axis + np.tan(np.radians(24)) * spec.frame.x_axis
        np.testing.assert_allclose(patch_pixel_to_ray(1.0, 0.0, spec), expect,
                                   atol=1e-12)

    def test_vertical_edge(self):
        spec = default_spec()
        expect = spec.frame.z_axis + np.tan(np.radians(48)) * spec.frame.y_axis
        np.testing.assert_allclose(patch_pixel_to_ray(0.0, 1.0, spec), expect,
                                   atol=1e-12)


class TestRayToFisheye:
    def test_on_axis(self, cam):
        xy = ray_to_fisheye([0.0, 0.0, 1.0], cam)
        np.testing.assert_allclose(xy, [cam.center_x, cam.center_y], atol=1e-9)

    def test_boundary(self, cam):
        # incidence angle exactly at max_angle: lands on the circle itself
        xy = ray_to_fisheye([1.0, 0.0, 0.0], cam)
        r = np.hypot(xy[0] - cam.center_x, xy[1] - cam.center_y)
        assert r == pytest.approx(cam.radius, abs=1e-9)

    def test_45deg(self, cam):
        xy = ray_to_fisheye([1.0, 0.0, 1.0], cam)
        np.testing.assert_allclose(
            xy, [cam.center_x + cam.radius / 2, cam.center_y], atol=1e-9)

    def test_out_of_range(self):
        cam = FisheyeCamera(512, 512, 512, np.radians(80))
        assert np.all(np.isnan(ray_to_fisheye([1.0, 0.0, 0.0], cam)))
        assert np.all(np.isnan(ray_to_fisheye([0.0, 0.0, -1.0], cam)))

    def test_zero_ray(self, cam):
        with pytest.raises(ValueError):
            ray_to_fisheye([0.0, 0.0, 0.0], cam)

    def test_radius_matches_incidence_angle(self, cam, rng):
        vecs = rng.normal(size=(500, 3))
        vecs = vecs[np.linalg.norm(vecs, axis=1) > 0.1]
        vecs[:, 2] = np.abs(vecs[:, 2])
        xy = ray_to_fisheye(vecs, cam)
        theta = np.arccos(vecs[:, 2] / np.linalg.norm(vecs, axis=1))
        expect = cam.radius * theta / cam.max_angle
        got = np.hypot(xy[:, 0] - cam.center_x, xy[:, 1] - cam.center_y)
        np.testing.assert_allclose(got, expect, atol=1e-6)


class TestFisheyeToRay:
    def test_center(self, cam):
        np.testing.assert_allclose(fisheye_to_ray(cam.center_x, cam.center_y, cam),
                                   [0, 0, 1], atol=1e-12)

    def test_half_radius(self, cam):
        ray = fisheye_to_ray(cam.center_x + cam.radius / 2, cam.center_y, cam)
        np.testing.assert_allclose(ray, np.array([1, 0, 1]) / np.sqrt(2),
                                   atol=1e-12)

    def test_outside_circle(self, cam):
        with pytest.raises(ValueError):
            fisheye_to_ray(cam.center_x + cam.radius + 2, cam.center_y, cam)

    def test_round_trip(self, cam, rng):
        ang = rng.uniform(0, 2 * np.pi, 1000)
        rad = cam.radius * np.sqrt(rng.uniform(0, 1, 1000))
        x = cam.center_x + rad * np.cos(ang)
        y = cam.center_y + rad * np.sin(ang)
        rays = fisheye_to_ray(x, y, cam)
        xy = ray_to_fisheye(rays, cam)
        err = np.hypot(xy[:, 0] - x, xy[:, 1] - y)
        assert err.max() < 1e-6


class TestRayToPatchPixel:
    def test_view_axis(self):
        spec = default_spec()
        np.testing.assert_allclose(ray_to_patch_pixel(spec.frame.z_axis, spec),
                                   [0, 0], atol=1e-12)

    def test_behind(self):
        spec = default_spec()
        assert np.all(np.isnan(ray_to_patch_pixel(-spec.frame.z_axis, spec)))

    def test_inverse_of_pixel_to_ray(self, rng):
        spec = default_spec(phi2=np.radians(135))
        xp = rng.uniform(-1, 1, 2000)
        yp = rng.uniform(-1, 1, 2000)
        rays = patch_pixel_to_ray(xp, yp, spec)
        rel = ray_to_patch_pixel(rays, spec)
        np.testing.assert_allclose(rel[:, 0], xp, atol=1e-9)
        np.testing.assert_allclose(rel[:, 1], yp, atol=1e-9)


class TestRoundTrips:
    def test_patch_fisheye_patch(self, cam, rng):
        for k in range(8):
            spec = default_spec(phi2=k * np.radians(45))
            xp = rng.uniform(-1, 1, 1000)
            yp = rng.uniform(-1, 1, 1000)
            rays = patch_pixel_to_ray(xp, yp, spec)
            xy = ray_to_fisheye(rays, cam)
            ok = np.isfinite(xy[:, 0])
            rays2 = fisheye_to_ray(xy[ok, 0], xy[ok, 1], cam)
            rel = ray_to_patch_pixel(rays2, spec)
            # compare in patch pixels at native resolution
            px = geo.patch_px_from_rel(rel[:, 0], spec.width_px)
            py = geo.patch_px_from_rel(rel[:, 1], spec.height_px)
            ex = geo.patch_px_from_rel(xp[ok], spec.width_px)
            ey = geo.patch_px_from_rel(yp[ok], spec.height_px)
            assert np.hypot(px - ex, py - ey).max() < 0.5


class TestWarpLut:
    def test_center_entry(self, cam):
        spec = default_spec()
        lut = build_warp_lut(spec, cam)
        expect_r = cam.radius * spec.phi1 / cam.max_angle
        # the exact patch center, via the same mapping the LUT samples
        xy = ray_to_fisheye(patch_pixel_to_ray(0.0, 0.0, spec), cam)
        r = np.hypot(xy[0] - cam.center_x, xy[1] - cam.center_y)
        assert r == pytest.approx(expect_r, abs=1e-9)
        # nearest stored texel is within a pixel or two of that radius
        texel = lut.coords[spec.height_px // 2, spec.width_px // 2]
        r_tex = np.hypot(texel[0] - cam.center_x, texel[1] - cam.center_y)
        assert r_tex == pytest.approx(expect_r, abs=2.0)

    def test_valid_entries_inside_circle(self, cam):
        spec = default_spec(phi2=np.radians(225))
        lut = build_warp_lut(spec, cam)
        coords = lut.coords.reshape(-1, 2)
        valid = coords[np.isfinite(coords[:, 0])]
        r = np.hypot(valid[:, 0] - cam.center_x, valid[:, 1] - cam.center_y)
        assert r.max() <= cam.radius + 1e-3

    def test_deterministic(self, cam):
        spec = default_spec()
        a = build_warp_lut(spec, cam)
        b = build_warp_lut(spec, cam)
        assert a.coords.tobytes() == b.coords.tobytes()

    def test_phi2_shift_rotates_lut(self, cam):
        delta = np.radians(22.5)
        la = build_warp_lut(default_spec(phi2=np.radians(45)), cam)
        lb = build_warp_lut(default_spec(phi2=np.radians(45) + delta), cam)
        a = la.coords.reshape(-1, 2).astype(np.float64)
        b = lb.coords.reshape(-1, 2).astype(np.float64)
        ok = np.isfinite(a[:, 0]) & np.isfinite(b[:, 0])
        c, s = np.cos(delta), np.sin(delta)
        ax = a[ok, 0] - cam.center_x
        ay = a[ok, 1] - cam.center_y
        rot = np.stack([c * ax - s * ay + cam.center_x,
                        s * ax + c * ay + cam.center_y], axis=1)
        err = np.hypot(rot[:, 0] - b[ok, 0], rot[:, 1] - b[ok, 1])
        assert err.max() < 1e-3

    def test_save_load_round_trip(self, cam, tmp_path):
        spec = default_spec(phi2=np.radians(90))
        lut = build_warp_lut(spec, cam)
        path = tmp_path / "patch.fplut"
        geo.save_lut(lut, path)
        loaded = geo.load_lut(path)
        assert loaded.camera == cam
        assert np.array_equal(loaded.coords, lut.coords, equal_nan=True)

    def test_load_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bogus.fplut"
        path.write_bytes(b"NOTLUT" + b"\x00" * 64)
        with pytest.raises(ValueError):
            geo.load_lut(path)


class TestWarpPatch:
    def test_constant_image(self, cam):
        spec = default_spec()
        lut = build_warp_lut(spec, cam)
        img = np.full((1024, 1024), 137, dtype=np.uint8)
        patch = warp_patch(img, lut)
        valid = np.isfinite(lut.coords[..., 0])
        assert patch.shape == (304, 152)
        assert np.all(patch[valid] == 137)
        assert np.all(patch[~valid] == 0)

    def test_radial_line_becomes_vertical(self, cam):
        phi2 = np.radians(45)
        spec = default_spec(phi2=phi2)
        ys, xs = np.mgrid[0:1024, 0:1024]
        dx = xs + 0.5 - cam.center_x
        dy = ys + 0.5 - cam.center_y
        # full diameter through the center at azimuth phi2: distance of each
        # pixel to the line through C with direction (cos phi2, sin phi2)
        dist = np.abs(dx * np.sin(phi2) - dy * np.cos(phi2))
        img = np.where(dist < 2.0, 255, 0).astype(np.uint8)
        patch = warp_patch(img, build_warp_lut(spec, cam))
        rows = patch.max(axis=1) > 128
        cols = np.argmax(patch, axis=1)[rows]
        center_col = (spec.width_px - 1) / 2
        assert rows.sum() > 250
        assert np.abs(cols - center_col).max() <= 3

    def test_dimension_mismatch(self, cam):
        lut = build_warp_lut(default_spec(), cam)
        with pytest.raises(ValueError):
            warp_patch(np.zeros((100, 100), dtype=np.uint8), lut)

    def test_rgb_passthrough(self, cam):
        spec = default_spec()
        lut = build_warp_lut(spec, cam)
        img = np.zeros((1024, 1024, 3), dtype=np.uint8)
        img[..., 1] = 200
        patch = warp_patch(img, lut)
        valid = np.isfinite(lut.coords[..., 0])
        assert patch.shape == (304, 152, 3)
        assert np.all(patch[valid, 1] == 200)
        assert np.all(patch[valid, 0] == 0)
