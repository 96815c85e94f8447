"""Synthetic top-view scenes: ray-cast renders of cylinder people.

Stands in for a real detector during testing: renders fisheye frames of
flat-shaded cylinders on a ground plane and emits both analytic ground
truth and "perfect detector" boxes in the patch frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .boxmap import PatchDetection
from .compositor import CompositeLayout, layout_patch_specs
from .evaluation import GroundTruth
from .geometry import (
    FisheyeCamera,
    fisheye_to_ray,
    in_patch,
    patch_px_from_rel,
    ray_to_patch_pixel,
)
from .person_model import CylinderPerson, SceneParams, project_cylinder


@dataclass(frozen=True)
class SyntheticScene:
    scene: SceneParams
    persons: tuple            # CylinderPerson
    grays: tuple              # one gray level per person
    background: int = 64
    resolution: int = 800

    def __post_init__(self):
        if len(self.persons) != len(self.grays):
            raise ValueError("one gray level per person required")
        for i, a in enumerate(self.persons):
            for b in self.persons[i + 1:]:
                gap = np.hypot(a.ground_x - b.ground_x, a.ground_y - b.ground_y)
                if gap < (a.diameter + b.diameter) / 2:
                    raise ValueError("persons intersect on the ground plane")


def _cylinder_hit_t(rays: np.ndarray, person: CylinderPerson,
                    camera_height: float) -> np.ndarray:
    """Nearest positive ray parameter hitting the cylinder, inf if missed.

    Rays start at the camera (origin); depth grows along +z down to the
    ground plane at ``camera_height``.
    """
    dx, dy, dz = rays[:, 0], rays[:, 1], rays[:, 2]
    gx, gy = person.ground_x, person.ground_y
    rho = person.diameter / 2
    z_top = camera_height - person.height
    t_best = np.full(len(rays), np.inf)

    # side surface: quadratic in the transverse plane
    a = dx * dx + dy * dy
    b = -2 * (dx * gx + dy * gy)
    c = gx * gx + gy * gy - rho * rho
    disc = b * b - 4 * a * c
    ok = (disc >= 0) & (a > 1e-15)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        for sign in (-1.0, 1.0):
            t = np.where(ok, (-b + sign * sq) / (2 * a), np.inf)
            z = t * dz
            valid = ok & (t > 0) & (z >= z_top) & (z <= camera_height)
            t_best = np.where(valid & (t < t_best), t, t_best)

    # top cap
    with np.errstate(divide="ignore", invalid="ignore"):
        t_cap = np.where(dz > 0, z_top / dz, np.inf)
    px = t_cap * dx - gx
    py = t_cap * dy - gy
    valid = (t_cap > 0) & np.isfinite(t_cap) & (px * px + py * py <= rho * rho)
    t_best = np.where(valid & (t_cap < t_best), t_cap, t_best)
    return t_best


def render_fisheye(scene: SyntheticScene, cam: FisheyeCamera
                   ) -> tuple[np.ndarray, GroundTruth]:
    """Ray-cast the scene; returns the raster and analytic ground truth."""
    n = scene.resolution
    ys, xs = np.mgrid[0:n, 0:n]
    px = (xs + 0.5).ravel()
    py = (ys + 0.5).ravel()
    r = np.hypot(px - cam.center_x, py - cam.center_y)
    inside = r <= cam.radius
    rays = fisheye_to_ray(px[inside], py[inside], cam)

    h_cam = scene.scene.camera_height
    t_hit = np.full(rays.shape[0], np.inf)
    gray = np.full(rays.shape[0], scene.background, dtype=np.uint8)
    for person, g in zip(scene.persons, scene.grays):
        t = _cylinder_hit_t(rays, person, h_cam)
        closer = t < t_hit
        t_hit = np.where(closer, t, t_hit)
        gray[closer] = g

    img = np.zeros(n * n, dtype=np.uint8)
    img[inside.ravel() if inside.ndim > 1 else inside] = gray
    img = img.reshape(n, n)

    boxes = []
    for person in scene.persons:
        box = project_cylinder(person, scene.scene, cam)
        if box is not None:
            boxes.append(box)
    return img, GroundTruth(image_id="0", boxes=tuple(boxes))


def silhouette_pixels(scene: SyntheticScene, cam: FisheyeCamera,
                      person_index: int) -> np.ndarray:
    """Fisheye pixel centers whose rays hit one cylinder (occlusion ignored)."""
    n = scene.resolution
    ys, xs = np.mgrid[0:n, 0:n]
    px = (xs + 0.5).ravel()
    py = (ys + 0.5).ravel()
    inside = np.hypot(px - cam.center_x, py - cam.center_y) <= cam.radius
    rays = fisheye_to_ray(px[inside], py[inside], cam)
    t = _cylinder_hit_t(rays, scene.persons[person_index],
                        scene.scene.camera_height)
    hit = np.isfinite(t)
    return np.stack([px[inside][hit], py[inside][hit]], axis=1)


def perfect_detections(scene: SyntheticScene, cam: FisheyeCamera,
                       layout: CompositeLayout,
                       min_visible_frac: float = 0.3) -> list[PatchDetection]:
    """Ideal patch-frame boxes: tight around each person's in-patch silhouette.

    A patch yields a detection only when at least ``min_visible_frac`` of
    the person's silhouette pixels map into its view, mimicking a real
    detector's failure on small fragments.  Scores are 1.0.
    """
    specs = layout_patch_specs(layout)
    out: list[PatchDetection] = []
    for pi in range(len(scene.persons)):
        sil = silhouette_pixels(scene, cam, pi)
        if len(sil) == 0:
            continue
        rays = fisheye_to_ray(sil[:, 0], sil[:, 1], cam)
        for k, spec in enumerate(specs):
            rel = ray_to_patch_pixel(rays, spec)
            ok = in_patch(rel)
            if np.count_nonzero(ok) / len(sil) < min_visible_frac:
                continue
            ux = patch_px_from_rel(rel[ok, 0], spec.width_px)
            uy = patch_px_from_rel(rel[ok, 1], spec.height_px)
            out.append(PatchDetection(patch=k,
                                      x0=float(ux.min()), y0=float(uy.min()),
                                      x1=float(ux.max()), y1=float(uy.max()),
                                      score=1.0))
    return out


def detections_to_composite_records(dets: list[PatchDetection],
                                    layout: CompositeLayout,
                                    composite_id: int = 0,
                                    image_id: str = "0") -> list[dict]:
    """Patch detections as detector-output records in composite pixels."""
    records = []
    for d in dets:
        ox, oy = layout.cell_origin(d.patch)
        records.append({
            "composite_id": composite_id,
            "image_id": image_id,
            "x": d.x0 + ox,
            "y": d.y0 + oy,
            "w": d.x1 - d.x0,
            "h": d.y1 - d.y0,
            "score": d.score,
            "class": "person",
        })
    return records


def random_scene(seed: int, n_people_range=(1, 6), radius_range=(0.5, 4.0),
                 camera_height: float = 3.0, height_range=(1.3, 1.7),
                 diameter_range=(0.45, 0.6),
                 resolution: int = 800) -> SyntheticScene:
    """Seeded scene with non-intersecting people on concentric ground rings."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_people_range[0], n_people_range[1] + 1))
    persons: list[CylinderPerson] = []
    grays: list[int] = []
    attempts = 0
    while len(persons) < n and attempts < 200:
        attempts += 1
        dist = rng.uniform(*radius_range)
        ang = rng.uniform(0, 2 * np.pi)
        p = CylinderPerson(
            ground_x=float(dist * np.cos(ang)),
            ground_y=float(dist * np.sin(ang)),
            height=float(rng.uniform(*height_range)),
            diameter=float(rng.uniform(*diameter_range)),
        )
        clear = all(
            np.hypot(p.ground_x - q.ground_x, p.ground_y - q.ground_y)
            > (p.diameter + q.diameter) / 2 + 0.1
            for q in persons
        )
        if clear:
            persons.append(p)
            grays.append(int(rng.integers(140, 255)))
    return SyntheticScene(scene=SceneParams(camera_height=camera_height),
                          persons=tuple(persons), grays=tuple(grays),
                          resolution=resolution)


def load_scene(path) -> SyntheticScene:
    """Read {camera_height, persons: [{x, y, height, diameter, gray}], ...}."""
    with open(path) as f:
        d = json.load(f)
    persons = tuple(
        CylinderPerson(ground_x=p["x"], ground_y=p["y"], height=p["height"],
                       diameter=p["diameter"])
        for p in d["persons"]
    )
    grays = tuple(int(p.get("gray", 200)) for p in d["persons"])
    return SyntheticScene(
        scene=SceneParams(camera_height=d["camera_height"]),
        persons=persons,
        grays=grays,
        background=int(d.get("background", 64)),
        resolution=int(d.get("resolution", 800)),
    )


def save_scene(path, scene: SyntheticScene) -> None:
    persons = [
        {"x": p.ground_x, "y": p.ground_y, "height": p.height,
         "diameter": p.diameter, "gray": g}
        for p, g in zip(scene.persons, scene.grays)
    ]
    with open(path, "w") as f:
        json.dump({
            "camera_height": scene.scene.camera_height,
            "persons": persons,
            "background": scene.background,
            "resolution": scene.resolution,
        }, f, indent=2)
