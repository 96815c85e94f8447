"""Cylinder pedestrian model: projected footprints and target-box sampling.

A person is a vertical cylinder standing on the ground plane below the
camera.  Ground coordinates are metric, with the origin at the nadir and
axes aligned with the fisheye image axes; projecting a ground point (x, y)
at height z uses the direction (x, y, camera_height - z) in the camera
frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import FisheyeCamera
from .rotrect import PolarBox

_N_CIRCLE = 360   # azimuthal samples per top/bottom circle
_N_EDGE = 64      # samples along each extreme vertical edge


@dataclass(frozen=True)
class CylinderPerson:
    ground_x: float
    ground_y: float
    height: float
    diameter: float

    def __post_init__(self):
        if self.height <= 0 or self.diameter <= 0:
            raise ValueError("cylinder height and diameter must be positive")


@dataclass(frozen=True)
class SceneParams:
    camera_height: float

    def __post_init__(self):
        if self.camera_height <= 0:
            raise ValueError("camera_height must be positive")


@dataclass(frozen=True)
class TargetBoxSet:
    boxes: tuple
    params_id: str


def project_ground_points(points: np.ndarray, camera_height: float,
                          cam: FisheyeCamera) -> tuple[np.ndarray, np.ndarray]:
    """Fisheye pixel positions and incidence angles of ground-frame points.

    ``points`` is (n, 3): metric x, y and height above the ground plane.
    Positions are pure equi-distance math and are returned even beyond the
    circle; the caller decides what to do with angles above max_angle.
    """
    depth = camera_height - points[:, 2]
    if np.any(depth <= 0):
        raise ValueError("points at or above the camera height")
    t = np.hypot(points[:, 0], points[:, 1])
    theta = np.arctan2(t, depth)
    rad = cam.radius * theta / cam.max_angle
    psi = np.arctan2(points[:, 1], points[:, 0])
    xy = np.stack([cam.center_x + rad * np.cos(psi),
                   cam.center_y + rad * np.sin(psi)], axis=1)
    return xy, theta


def silhouette_points(person: CylinderPerson, n_circle: int = _N_CIRCLE,
                      n_edge: int = _N_EDGE) -> np.ndarray:
    """3D sample points on the cylinder surface that bound its projection.

    Both rim circles are sampled densely (the projected extremes live
    there), plus the two vertical edges at the azimuthal tangent points.
    Circle sampling is anchored at the person's ground azimuth so the
    sample set is mirror-symmetric about the radial direction.
    """
    rho = person.diameter / 2
    gx, gy = person.ground_x, person.ground_y
    d = np.hypot(gx, gy)
    base = np.arctan2(gy, gx) if d > 1e-12 else 0.0

    angs = base + 2 * np.pi * np.arange(n_circle) / n_circle
    ring = np.stack([gx + rho * np.cos(angs), gy + rho * np.sin(angs)], axis=1)
    bottom = np.concatenate([ring, np.zeros((n_circle, 1))], axis=1)
    top = np.concatenate([ring, np.full((n_circle, 1), person.height)], axis=1)

    if d > rho:
        # vertical tangent lines seen from the nadir axis
        half = np.arccos(-rho / d)
    else:
        half = np.pi / 2
    zs = np.linspace(0.0, person.height, n_edge)
    edges = []
    for sign in (-1.0, 1.0):
        a = base + sign * half
        ex = gx + rho * np.cos(a)
        ey = gy + rho * np.sin(a)
        edges.append(np.stack([np.full(n_edge, ex), np.full(n_edge, ey), zs],
                              axis=1))
    return np.concatenate([bottom, top] + edges, axis=0)


def enclosing_polar_box(points_px: np.ndarray, cam: FisheyeCamera) -> PolarBox:
    """Smallest polar-axis-aligned rectangle around projected points.

    The axes are anchored at the polar angle of the point centroid; a
    centroid at the image center falls back to image-axis alignment.
    """
    centroid = points_px.mean(axis=0)
    d = centroid - [cam.center_x, cam.center_y]
    n = np.hypot(d[0], d[1])
    if n > 1e-9:
        u = d / n
    else:
        u = np.array([1.0, 0.0])
    v = np.array([-u[1], u[0]])
    rel = points_px - [cam.center_x, cam.center_y]
    cu = rel @ u
    cv = rel @ v
    center = np.array([cam.center_x, cam.center_y]) \
        + 0.5 * (cu.min() + cu.max()) * u + 0.5 * (cv.min() + cv.max()) * v
    return PolarBox(center_x=float(center[0]), center_y=float(center[1]),
                    width=float(cv.max() - cv.min()),
                    height=float(cu.max() - cu.min()))


def project_cylinder(person: CylinderPerson, scene: SceneParams,
                     cam: FisheyeCamera, n_circle: int = _N_CIRCLE,
                     n_edge: int = _N_EDGE) -> PolarBox | None:
    """Project a cylinder to its enclosing polar-aligned box.

    Returns None when the cylinder lies entirely outside the camera's
    field of view.
    """
    if scene.camera_height <= person.height:
        raise ValueError("cylinder must be below the camera")
    pts = silhouette_points(person, n_circle=n_circle, n_edge=n_edge)
    xy, theta = project_ground_points(pts, scene.camera_height, cam)
    if np.all(theta > cam.max_angle):
        return None
    return enclosing_polar_box(xy, cam)


def _box_at_radius(g: float, height: float, diameter: float,
                   scene: SceneParams, cam: FisheyeCamera) -> PolarBox:
    person = CylinderPerson(ground_x=g, ground_y=0.0, height=height,
                            diameter=diameter)
    box = project_cylinder(person, scene, cam)
    assert box is not None
    return box


def generate_target_boxes(scene: SceneParams, person_height: float,
                          person_diameter: float, cam: FisheyeCamera,
                          overlap: float = 0.8,
                          min_height_px: float = 20.0) -> TargetBoxSet:
    """Sample target boxes on concentric ground rings.

    Adjacent rings are spaced so their box centers differ radially by at
    most (1 - overlap) of the smaller box height; boxes on a ring are
    spaced so adjacent centers differ tangentially by at most (1 - overlap)
    of the box width.  Generation stops once box heights fall below
    ``min_height_px`` past their peak.
    """
    if not 0 < overlap < 1:
        raise ValueError(f"overlap must be in (0, 1), got {overlap}")
    gap = 1.0 - overlap
    cx, cy = cam.center_x, cam.center_y

    def center_radius(box: PolarBox) -> float:
        return float(np.hypot(box.center_x - cx, box.center_y - cy))

    boxes: list[PolarBox] = []
    nadir = _box_at_radius(0.0, person_height, person_diameter, scene, cam)
    boxes.append(nadir)
    rc_prev = center_radius(nadir)
    h_prev = nadir.height
    g_prev = 0.0

    for _ in range(10000):
        def spacing_gap(g: float) -> float:
            box = _box_at_radius(g, person_height, person_diameter, scene, cam)
            want = gap * min(h_prev, box.height)
            return center_radius(box) - rc_prev - want

        lo, hi = g_prev, g_prev + 0.25
        while spacing_gap(hi) < 0:
            hi += 0.25
            if hi > g_prev + 100:
                break
        for _ in range(45):
            mid = 0.5 * (lo + hi)
            if spacing_gap(mid) < 0:
                lo = mid
            else:
                hi = mid
        g = hi
        box = _box_at_radius(g, person_height, person_diameter, scene, cam)
        rc = center_radius(box)
        if box.height < min_height_px and box.height < h_prev:
            break
        if box.height >= min_height_px:
            # one ring of rotated copies; the projection is rotationally
            # symmetric so only the box at azimuth 0 needs computing
            arg = min(1.0, gap * box.width / (2 * rc)) if rc > 0 else 1.0
            step = 2 * np.arcsin(arg)
            n = max(1, int(np.ceil(2 * np.pi / step)))
            for k in range(n):
                a = 2 * np.pi * k / n
                boxes.append(PolarBox(
                    center_x=cx + rc * np.cos(a),
                    center_y=cy + rc * np.sin(a),
                    width=box.width, height=box.height))
        g_prev, rc_prev, h_prev = g, rc, box.height

    boxes = [b for b in boxes if b.height >= min_height_px]
    params_id = (f"h{person_height:.2f}_d{person_diameter:.2f}"
                 f"_H{scene.camera_height:.2f}")
    return TargetBoxSet(boxes=tuple(boxes), params_id=params_id)


def parameter_grid(person_heights=(1.3, 1.5, 1.7),
                   person_diameters=(0.45, 0.6),
                   camera_heights=(2.75, 3.25)) -> list[tuple[float, float, float]]:
    """(height, diameter, camera_height) combinations for exemplar building."""
    return [(h, d, ch) for h in person_heights for d in person_diameters
            for ch in camera_heights]
