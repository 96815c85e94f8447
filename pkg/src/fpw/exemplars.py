"""Mapping exemplars: target boxes in the fisheye frame paired with their
reference boxes in a patch, plus the containment ratio of the mapping.

Reference boxes are stored in relative patch coordinates in [0, 1]^2 so
they stay independent of the patch pixel resolution.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .geometry import FisheyeCamera, PatchSpec, fisheye_to_ray, ray_to_patch_pixel
from .person_model import SceneParams, generate_target_boxes, parameter_grid
from .rotrect import PolarBox, box_from_dict, box_to_dict

MIN_CONTAINMENT = 0.1
MIN_TARGET_HEIGHT_PX = 20.0
MAX_ELLIPSE_SAMPLES = 4096


@dataclass(frozen=True)
class MappingExemplar:
    target: PolarBox
    reference: tuple  # (x0, y0, x1, y1) in [0, 1]^2 patch coordinates
    containment: float


@dataclass(frozen=True, eq=False)
class ExemplarSet:
    patch_index: int
    spec: PatchSpec
    exemplars: tuple

    def __len__(self):
        return len(self.exemplars)

    @cached_property
    def reference_array(self) -> np.ndarray:
        return np.array([m.reference for m in self.exemplars], dtype=float) \
            .reshape(len(self.exemplars), 4)

    @cached_property
    def target_array(self) -> np.ndarray:
        return np.array(
            [[m.target.center_x, m.target.center_y, m.target.width,
              m.target.height] for m in self.exemplars], dtype=float
        ).reshape(len(self.exemplars), 4)

    @cached_property
    def containment_array(self) -> np.ndarray:
        return np.array([m.containment for m in self.exemplars], dtype=float)


def ellipse_samples(box: PolarBox, cam: FisheyeCamera,
                    max_samples: int = MAX_ELLIPSE_SAMPLES
                    ) -> tuple[np.ndarray, int]:
    """Fisheye-frame sample points inside the ellipse inscribed in a box.

    Samples sit on a pixel-granularity grid in the box frame, strided so at
    most ``max_samples`` land inside the ellipse's bounding box.  Returns
    the points and their count.
    """
    w, h = box.width, box.height
    d = np.array([box.center_x - cam.center_x, box.center_y - cam.center_y])
    n = np.hypot(d[0], d[1])
    u = d / n if n > 1e-12 else np.array([1.0, 0.0])
    v = np.array([-u[1], u[0]])
    stride = max(1, int(np.ceil(np.sqrt(w * h / max_samples))))
    ou = np.arange(-h / 2 + stride / 2, h / 2, stride)
    ov = np.arange(-w / 2 + stride / 2, w / 2, stride)
    gu, gv = np.meshgrid(ou, ov)
    gu = gu.ravel()
    gv = gv.ravel()
    inside = (2 * gu / h) ** 2 + (2 * gv / w) ** 2 <= 1.0
    gu, gv = gu[inside], gv[inside]
    pts = np.array([box.center_x, box.center_y]) \
        + gu[:, None] * u + gv[:, None] * v
    return pts, len(pts)


def _rel_coords_per_patch(pts: np.ndarray, cam: FisheyeCamera,
                          specs: list[PatchSpec]) -> list[np.ndarray]:
    """Relative patch coordinates of fisheye points, one (n, 2) per spec.

    Points outside the fisheye circle (which cannot be mapped) and points
    behind a view come back as NaN.
    """
    r = np.hypot(pts[:, 0] - cam.center_x, pts[:, 1] - cam.center_y)
    in_circle = r <= cam.radius
    rays = fisheye_to_ray(pts[in_circle, 0], pts[in_circle, 1], cam)
    out = []
    for spec in specs:
        rel = np.full((len(pts), 2), np.nan)
        rel[in_circle] = ray_to_patch_pixel(rays, spec)
        out.append(rel)
    return out


def build_reference_box(target: PolarBox, spec: PatchSpec, cam: FisheyeCamera,
                        min_containment: float = MIN_CONTAINMENT,
                        max_samples: int = MAX_ELLIPSE_SAMPLES
                        ) -> tuple[tuple | None, float]:
    """Reference box and containment ratio of a target box for one patch.

    Returns (None, containment) when the containment ratio falls below the
    cutoff (including targets entirely outside the patch).
    """
    pts, total = ellipse_samples(target, cam, max_samples=max_samples)
    rel = _rel_coords_per_patch(pts, cam, [spec])[0]
    with np.errstate(invalid="ignore"):
        ok = (np.abs(rel[:, 0]) <= 1) & (np.abs(rel[:, 1]) <= 1)
    fc = float(np.count_nonzero(ok)) / total
    if fc < min_containment:
        return None, fc
    sel = rel[ok]
    x01 = (sel[:, 0] + 1) / 2
    y01 = (sel[:, 1] + 1) / 2
    ref = (float(x01.min()), float(y01.min()), float(x01.max()), float(y01.max()))
    return ref, fc


def build_exemplar_sets(specs: list[PatchSpec], target_sets,
                        cam: FisheyeCamera,
                        min_containment: float = MIN_CONTAINMENT,
                        min_height_px: float = MIN_TARGET_HEIGHT_PX,
                        max_samples: int = MAX_ELLIPSE_SAMPLES
                        ) -> list[ExemplarSet]:
    """Build the exemplar sets of all patches in one pass over target boxes.

    Ellipse samples and their rays are computed once per target box and
    shared across patches.
    """
    per_patch: list[list[MappingExemplar]] = [[] for _ in specs]
    for tset in target_sets:
        for box in tset.boxes:
            if box.height < min_height_px:
                continue
            pts, total = ellipse_samples(box, cam, max_samples=max_samples)
            rels = _rel_coords_per_patch(pts, cam, specs)
            for k, rel in enumerate(rels):
                with np.errstate(invalid="ignore"):
                    ok = (np.abs(rel[:, 0]) <= 1) & (np.abs(rel[:, 1]) <= 1)
                n_ok = int(np.count_nonzero(ok))
                fc = n_ok / total
                if fc < min_containment:
                    continue
                sel = rel[ok]
                x01 = (sel[:, 0] + 1) / 2
                y01 = (sel[:, 1] + 1) / 2
                per_patch[k].append(MappingExemplar(
                    target=box,
                    reference=(float(x01.min()), float(y01.min()),
                               float(x01.max()), float(y01.max())),
                    containment=fc,
                ))
    return [ExemplarSet(patch_index=k, spec=spec, exemplars=tuple(ex))
            for k, (spec, ex) in enumerate(zip(specs, per_patch))]


def build_exemplar_set(spec: PatchSpec, target_sets, cam: FisheyeCamera,
                       patch_index: int = 0, **kwargs) -> ExemplarSet:
    """Exemplar set for a single patch; see build_exemplar_sets."""
    sets = build_exemplar_sets([spec], target_sets, cam, **kwargs)
    return ExemplarSet(patch_index=patch_index, spec=spec,
                       exemplars=sets[0].exemplars)


def default_target_sets(cam: FisheyeCamera, overlap: float = 0.8,
                        min_height_px: float = MIN_TARGET_HEIGHT_PX,
                        grid=None) -> list:
    """Target box sets for the default person/camera parameter grid."""
    if grid is None:
        grid = parameter_grid()
    return [
        generate_target_boxes(SceneParams(ch), h, d, cam, overlap=overlap,
                              min_height_px=min_height_px)
        for h, d, ch in grid
    ]


def build_hash(cam: FisheyeCamera, specs: list[PatchSpec], params: dict) -> str:
    """Configuration fingerprint tying a cache file to its build inputs."""
    payload = {
        "camera": [cam.center_x, cam.center_y, cam.radius, cam.max_angle],
        "specs": [[s.phi1, s.phi2, s.alpha_x, s.alpha_y, s.width_px, s.height_px]
                  for s in specs],
        "params": params,
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_exemplar_sets(path, sets: list[ExemplarSet], cache_hash: str) -> None:
    """One JSON line per exemplar, after a header line carrying the hash."""
    with open(path, "w") as f:
        f.write(json.dumps({"format": "fpw-exemplars-v1", "hash": cache_hash,
                            "n_patches": len(sets)}) + "\n")
        for es in sets:
            for m in es.exemplars:
                f.write(json.dumps({
                    "patch": es.patch_index,
                    "target": box_to_dict(m.target),
                    "ref": list(m.reference),
                    "fc": m.containment,
                }) + "\n")


def load_exemplar_sets(path, specs: list[PatchSpec],
                       expect_hash: str) -> list[ExemplarSet]:
    """Load a cache file, rejecting it when the hash does not match."""
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("format") != "fpw-exemplars-v1":
            raise ValueError(f"{path}: not an exemplar cache file")
        if header.get("hash") != expect_hash:
            raise ValueError(
                f"{path}: cache hash {header.get('hash')} does not match the "
                f"active configuration ({expect_hash}); rebuild the cache"
            )
        per_patch: list[list[MappingExemplar]] = [[] for _ in specs]
        for line in f:
            d = json.loads(line)
            per_patch[d["patch"]].append(MappingExemplar(
                target=box_from_dict(d["target"]),
                reference=tuple(d["ref"]),
                containment=d["fc"],
            ))
    return [ExemplarSet(patch_index=k, spec=spec, exemplars=tuple(ex))
            for k, (spec, ex) in enumerate(zip(specs, per_patch))]
