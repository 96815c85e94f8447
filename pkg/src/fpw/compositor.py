"""Assemble perspective patches into a square composite image.

The composite is a grid of patches sharing phi1 and the view angles, with
phi2 stepping evenly around the full circle.  Cell placement is row-major:
patch k occupies column k % columns, row k // columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    FisheyeCamera,
    PatchSpec,
    WarpLut,
    build_warp_lut,
    fisheye_to_ray,
    in_patch,
    load_lut,
    ray_to_patch_pixel,
    save_lut,
    warp_patch,
)


@dataclass(frozen=True)
class CompositeLayout:
    """Grid geometry and shared patch parameters of a composite image."""

    n_patches: int = 8
    patch_w: int = 152
    patch_h: int = 304
    columns: int = 4
    rows: int = 2
    composite_size: int = 608
    phi2_base: float = 0.0
    phi1: float = np.radians(36.0)
    alpha_x: float = np.radians(48.0)
    alpha_y: float = np.radians(96.0)

    def __post_init__(self):
        if self.columns * self.patch_w != self.composite_size:
            raise ValueError("columns * patch_w must equal composite_size")
        if self.rows * self.patch_h != self.composite_size:
            raise ValueError("rows * patch_h must equal composite_size")
        if self.n_patches != self.columns * self.rows:
            raise ValueError("n_patches must equal columns * rows")

    @property
    def phi2_step(self) -> float:
        return 2 * np.pi / self.n_patches

    def cell_origin(self, k: int) -> tuple[int, int]:
        """(x, y) composite pixel origin of cell k."""
        return (k % self.columns) * self.patch_w, (k // self.columns) * self.patch_h


@dataclass(frozen=True, eq=False)
class CompositeImage:
    image: np.ndarray
    specs: list[PatchSpec]
    layout: CompositeLayout


def layout_patch_specs(layout: CompositeLayout) -> list[PatchSpec]:
    """One PatchSpec per grid cell, phi2 stepping by the layout's step."""
    return [
        PatchSpec(
            phi1=layout.phi1,
            phi2=layout.phi2_base + k * layout.phi2_step,
            alpha_x=layout.alpha_x,
            alpha_y=layout.alpha_y,
            width_px=layout.patch_w,
            height_px=layout.patch_h,
        )
        for k in range(layout.n_patches)
    ]


class LutCache:
    """In-memory warp LUT cache, optionally backed by a cache directory."""

    def __init__(self, directory=None):
        self.directory = directory
        self._luts: dict = {}

    def _path(self, spec: PatchSpec, cam: FisheyeCamera):
        import os

        tag = "_".join(
            f"{v:.6f}" for v in (spec.phi1, spec.phi2, spec.alpha_x, spec.alpha_y,
                                 cam.center_x, cam.center_y, cam.radius, cam.max_angle)
        )
        name = f"lut_{spec.width_px}x{spec.height_px}_{tag}.fplut"
        return os.path.join(self.directory, name)

    def get(self, spec: PatchSpec, cam: FisheyeCamera) -> WarpLut:
        key = (spec, cam)
        if key in self._luts:
            return self._luts[key]
        lut = None
        if self.directory is not None:
            import os

            path = self._path(spec, cam)
            if os.path.exists(path):
                lut = load_lut(path)
        if lut is None:
            lut = build_warp_lut(spec, cam)
            if self.directory is not None:
                import os

                os.makedirs(self.directory, exist_ok=True)
                save_lut(lut, self._path(spec, cam))
        self._luts[key] = lut
        return lut


def build_composite(image: np.ndarray, layout: CompositeLayout,
                    cam: FisheyeCamera, lut_cache: LutCache | None = None) -> CompositeImage:
    """Warp every patch and paste it into its grid cell."""
    if lut_cache is None:
        lut_cache = LutCache()
    specs = layout_patch_specs(layout)
    shape = (layout.composite_size, layout.composite_size)
    if image.ndim == 3:
        shape = shape + (image.shape[2],)
    canvas = np.zeros(shape, dtype=image.dtype)
    for k, spec in enumerate(specs):
        lut = lut_cache.get(spec, cam)
        patch = warp_patch(image, lut)
        ox, oy = layout.cell_origin(k)
        canvas[oy:oy + layout.patch_h, ox:ox + layout.patch_w] = patch
    return CompositeImage(image=canvas, specs=specs, layout=layout)


def composite_box_to_patch(box, layout: CompositeLayout) -> tuple[int, tuple]:
    """Assign a composite-frame box to the patch containing its center.

    ``box`` is (x0, y0, x1, y1) in composite pixels.  Returns the patch
    index and the box cropped to that cell, in patch-local pixels.  Centers
    exactly on a cell boundary go to the higher-index cell.
    """
    x0, y0, x1, y1 = box
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"degenerate box {box}")
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    col = min(int(cx // layout.patch_w), layout.columns - 1)
    row = min(int(cy // layout.patch_h), layout.rows - 1)
    k = row * layout.columns + col
    ox, oy = layout.cell_origin(k)
    lx0 = max(x0, ox) - ox
    ly0 = max(y0, oy) - oy
    lx1 = min(x1, ox + layout.patch_w) - ox
    ly1 = min(y1, oy + layout.patch_h) - oy
    return k, (lx0, ly0, lx1, ly1)


def coverage_map(layout: CompositeLayout, cam: FisheyeCamera,
                 shape: tuple[int, int] | None = None) -> np.ndarray:
    """Per-fisheye-pixel count of patches whose field of view contains it."""
    if shape is None:
        shape = (int(np.ceil(cam.center_y + cam.radius)),
                 int(np.ceil(cam.center_x + cam.radius)))
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    px = xs + 0.5
    py = ys + 0.5
    r = np.hypot(px - cam.center_x, py - cam.center_y)
    inside = r <= cam.radius
    counts = np.zeros(shape, dtype=np.int32)
    rays = fisheye_to_ray(px[inside], py[inside], cam)
    acc = np.zeros(rays.shape[0], dtype=np.int32)
    for spec in layout_patch_specs(layout):
        rel = ray_to_patch_pixel(rays, spec)
        acc += in_patch(rel)
    counts[inside] = acc
    return counts


def write_png(path, image: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(image).save(path)


def read_png(path) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(path))


def write_spec_sidecar(path, composite: CompositeImage) -> None:
    """JSON sidecar describing each cell, for re-associating detector output."""
    entries = []
    for k, spec in enumerate(composite.specs):
        ox, oy = composite.layout.cell_origin(k)
        entries.append({
            "phi1": spec.phi1,
            "phi2": spec.phi2,
            "alpha_x": spec.alpha_x,
            "alpha_y": spec.alpha_y,
            "cell_x": ox,
            "cell_y": oy,
            "w": spec.width_px,
            "h": spec.height_px,
        })
    with open(path, "w") as f:
        json.dump(entries, f, indent=2)
