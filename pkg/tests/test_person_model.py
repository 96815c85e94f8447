import numpy as np
import pytest

from fpw.geometry import FisheyeCamera
from fpw.person_model import (
    CylinderPerson,
    SceneParams,
    generate_target_boxes,
    parameter_grid,
    project_cylinder,
)
from fpw.rotrect import PolarBox
from oracles import enclosing_polar_box as oracle_box
from oracles import project_cylinder_points, random_cylinder_surface

CAM500 = FisheyeCamera(500.0, 500.0, 500.0, np.pi / 2)
SCENE = SceneParams(camera_height=3.0)


class TestProjectCylinder:
    def test_nadir_is_symmetric_disk(self):
        person = CylinderPerson(0.0, 0.0, height=1.7, diameter=0.5)
        box = project_cylinder(person, SCENE, CAM500)
        # enclosing box of a concentric disk: width == height == top diameter
        top_theta = np.arctan(0.25 / (3.0 - 1.7))
        expect = 2 * CAM500.radius * top_theta / CAM500.max_angle
        assert box.width == pytest.approx(expect, abs=0.05)
        assert box.height == pytest.approx(expect, abs=0.05)
        assert box.center_x == pytest.approx(CAM500.center_x, abs=1e-6)
        assert box.center_y == pytest.approx(CAM500.center_y, abs=1e-6)

    def test_matches_random_surface_oracle(self, rng):
        person = CylinderPerson(2.0, 0.0, height=1.7, diameter=0.5)
        box = project_cylinder(person, SCENE, CAM500)
        pts3 = random_cylinder_surface(rng, 2.0, 0.0, 1.7, 0.5, 1_000_000)
        pts2 = project_cylinder_points(pts3, SCENE.camera_height, CAM500)
        ocx, ocy, ow, oh = oracle_box(pts2, (CAM500.center_x, CAM500.center_y))
        assert box.center_x == pytest.approx(ocx, abs=1.0)
        assert box.center_y == pytest.approx(ocy, abs=1.0)
        assert box.width == pytest.approx(ow, abs=1.0)
        assert box.height == pytest.approx(oh, abs=1.0)

    def test_center_azimuth_matches_ground_azimuth(self, rng):
        for _ in range(25):
            ang = rng.uniform(-np.pi, np.pi)
            dist = rng.uniform(0.3, 5.0)
            person = CylinderPerson(dist * np.cos(ang), dist * np.sin(ang),
                                    height=1.6, diameter=0.5)
            box = project_cylinder(person, SCENE, CAM500)
            got = np.arctan2(box.center_y - CAM500.center_y,
                             box.center_x - CAM500.center_x)
            diff = np.angle(np.exp(1j * (got - ang)))
            assert abs(diff) < 1e-6

    def test_size_invariant_to_azimuth(self, rng):
        base = project_cylinder(CylinderPerson(1.5, 0.0, 1.7, 0.5), SCENE, CAM500)
        for ang in rng.uniform(0, 2 * np.pi, 10):
            rot = project_cylinder(
                CylinderPerson(1.5 * np.cos(ang), 1.5 * np.sin(ang), 1.7, 0.5),
                SCENE, CAM500)
            assert rot.width == pytest.approx(base.width, abs=1e-6)
            assert rot.height == pytest.approx(base.height, abs=1e-6)

    def test_height_bounded(self, rng):
        for dist in rng.uniform(0.0, 30.0, 20):
            box = project_cylinder(CylinderPerson(dist, 0.0, 1.7, 0.5),
                                   SCENE, CAM500)
            assert 0 < box.height < 2 * CAM500.radius

    def test_sampling_density_converged(self):
        person = CylinderPerson(1.8, 0.7, height=1.7, diameter=0.5)
        a = project_cylinder(person, SCENE, CAM500)
        b = project_cylinder(person, SCENE, CAM500, n_circle=720, n_edge=128)
        for field in ("center_x", "center_y", "width", "height"):
            assert abs(getattr(a, field) - getattr(b, field)) < 0.2

    def test_above_camera_rejected(self):
        with pytest.raises(ValueError):
            project_cylinder(CylinderPerson(1.0, 0.0, 3.5, 0.5), SCENE, CAM500)

    def test_size_curves_shape(self):
        # height/width against distance: smooth, and small near the rim
        dists = np.linspace(0.0, 25.0, 60)
        heights = []
        widths = []
        for d in dists:
            box = project_cylinder(CylinderPerson(d, 0.0, 1.7, 0.5), SCENE, CAM500)
            heights.append(box.height)
            widths.append(box.width)
        heights = np.array(heights)
        widths = np.array(widths)
        assert np.all(np.isfinite(heights)) and np.all(np.isfinite(widths))
        assert heights[-1] < heights.max() / 3
        assert widths[-1] < widths.max() / 3
        # single peak: rises then falls
        peak = int(np.argmax(heights))
        assert np.all(np.diff(heights[:peak + 1]) > -1e-6)
        assert np.all(np.diff(heights[peak:]) < 1e-6)


class TestGenerateTargetBoxes:
    def test_overlap_rule(self):
        ts = generate_target_boxes(SCENE, 1.7, 0.5, CAM500, overlap=0.8)
        cx, cy = CAM500.center_x, CAM500.center_y
        radii = np.array([np.hypot(b.center_x - cx, b.center_y - cy)
                          for b in ts.boxes])
        ring_r = np.unique(np.round(radii, 6))
        # radial spacing between adjacent rings stays within the rule
        by_ring = {}
        for b, r in zip(ts.boxes, np.round(radii, 6)):
            by_ring.setdefault(r, []).append(b)
        rs = sorted(by_ring)
        for r0, r1 in zip(rs, rs[1:]):
            h0 = by_ring[r0][0].height
            h1 = by_ring[r1][0].height
            assert r1 - r0 <= 0.2 * min(h0, h1) + 1e-6
        # tangential spacing on each ring
        for r in rs[1:]:
            ring = by_ring[r]
            n = len(ring)
            w = ring[0].width
            chord = 2 * r * np.sin(np.pi / n) if n > 1 else 0.0
            assert chord <= 0.2 * w + 1e-6

    def test_low_overlap_much_sparser(self):
        dense = generate_target_boxes(SCENE, 1.7, 0.5, CAM500, overlap=0.8)
        sparse = generate_target_boxes(SCENE, 1.7, 0.5, CAM500, overlap=0.2)
        assert len(sparse.boxes) < len(dense.boxes) / 8

    def test_min_height_filter(self):
        ts = generate_target_boxes(SCENE, 1.7, 0.5, CAM500, overlap=0.8,
                                   min_height_px=20.0)
        assert all(b.height >= 20.0 for b in ts.boxes)

    def test_params_id(self):
        ts = generate_target_boxes(SCENE, 1.7, 0.5, CAM500, overlap=0.5)
        assert ts.params_id == "h1.70_d0.50_H3.00"

    def test_parameter_grid_is_twelve_sets(self):
        grid = parameter_grid()
        assert len(grid) == 12
        assert len(set(grid)) == 12
        heights = {h for h, _, _ in grid}
        diameters = {d for _, d, _ in grid}
        cam_heights = {c for _, _, c in grid}
        assert heights == {1.3, 1.5, 1.7}
        assert diameters == {0.45, 0.6}
        assert cam_heights == {2.75, 3.25}

    def test_invalid_overlap(self):
        with pytest.raises(ValueError):
            generate_target_boxes(SCENE, 1.7, 0.5, CAM500, overlap=1.5)
