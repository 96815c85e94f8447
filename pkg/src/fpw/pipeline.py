"""End-to-end orchestration: warp, ingest, map, suppress, evaluate.

The detector itself stays external: it consumes composite images and
produces JSON-line detections keyed by composite id (0 for the base
orientation, 1 for the offset orientation used by test-time
augmentation).  A subprocess adapter is provided for detectors runnable
as a command.
"""

from __future__ import annotations

import json
import os
import subprocess
import tempfile
import time
from dataclasses import dataclass, replace

import numpy as np

from . import boxmap, exemplars, nms, synth
from .boxmap import FisheyeDetection, PatchDetection
from .compositor import (
    CompositeImage,
    CompositeLayout,
    LutCache,
    build_composite,
    composite_box_to_patch,
    layout_patch_specs,
)
from .config import PipelineConfig
from .evaluation import GroundTruth
from .synth import SyntheticScene


class DataError(ValueError):
    pass


@dataclass
class TimingReport:
    """Per-stage wall times in milliseconds; detector time is external."""

    warp_ms: float = 0.0
    detector_ms: float | None = None
    mapping_ms: float = 0.0
    nms_ms: float = 0.0

    def as_dict(self) -> dict:
        return {"warp_ms": self.warp_ms, "detector_ms": self.detector_ms,
                "mapping_ms": self.mapping_ms, "nms_ms": self.nms_ms}


class Pipeline:
    """Holds the per-configuration state: layouts, LUTs, exemplar sets."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.lut_cache = LutCache(directory=config.lut_dir)
        base = config.layout
        self.layouts = [
            base,
            replace(base, phi2_base=base.phi2_base + config.tta_offset),
        ]
        self._exemplar_sets: dict[int, list] = {}
        self.unmapped_count = 0

    # -- exemplar sets -----------------------------------------------------

    def _cache_path(self, composite: int) -> str | None:
        path = self.config.exemplar_cache
        if path is None:
            return None
        root, ext = os.path.splitext(path)
        return f"{root}.c{composite}{ext or '.jsonl'}"

    def exemplar_hash(self, composite: int) -> str:
        specs = layout_patch_specs(self.layouts[composite])
        return exemplars.build_hash(self.config.camera, specs,
                                    self.config.exemplar_params())

    def ensure_exemplars(self, composite: int = 0, allow_build: bool = True):
        if composite in self._exemplar_sets:
            return self._exemplar_sets[composite]
        cfg = self.config
        specs = layout_patch_specs(self.layouts[composite])
        path = self._cache_path(composite)
        sets = None
        if path is not None and os.path.exists(path):
            sets = exemplars.load_exemplar_sets(
                path, specs, self.exemplar_hash(composite))
        if sets is None:
            if not allow_build:
                raise DataError(
                    f"exemplar cache missing for composite {composite} "
                    f"({path!r}) and building is disabled")
            target_sets = exemplars.default_target_sets(
                cfg.camera, overlap=cfg.target_overlap,
                min_height_px=cfg.min_target_height_px,
                grid=[(h, d, ch) for h in cfg.person_heights
                      for d in cfg.person_diameters
                      for ch in cfg.scene_camera_heights])
            sets = exemplars.build_exemplar_sets(
                specs, target_sets, cfg.camera,
                min_containment=cfg.min_containment,
                min_height_px=cfg.min_target_height_px,
                max_samples=cfg.max_ellipse_samples)
            if path is not None:
                os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
                exemplars.save_exemplar_sets(path, sets,
                                             self.exemplar_hash(composite))
        self._exemplar_sets[composite] = sets
        return sets

    # -- frame processing --------------------------------------------------

    def build_composite(self, image: np.ndarray,
                        composite: int = 0) -> CompositeImage:
        return build_composite(image, self.layouts[composite],
                               self.config.camera, self.lut_cache)

    def ingest(self, records: list[dict], composite: int = 0
               ) -> list[PatchDetection]:
        """Composite-frame records -> cropped patch detections.

        Records are sorted canonically so the result is independent of the
        input line order.
        """
        layout = self.layouts[composite]
        records = sorted(records, key=lambda r: (-r["score"], r["x"], r["y"],
                                                 r["w"], r["h"]))
        dets = []
        for r in records:
            box = (r["x"], r["y"], r["x"] + r["w"], r["y"] + r["h"])
            try:
                k, (x0, y0, x1, y1) = composite_box_to_patch(box, layout)
            except ValueError as e:
                raise DataError(f"bad detection box {box}: {e}") from e
            if x1 <= x0 or y1 <= y0:
                continue
            dets.append(PatchDetection(patch=k, x0=x0, y0=y0, x1=x1, y1=y1,
                                       score=min(1.0, r["score"])))
        return dets

    def _map_composite(self, patch_dets: list[PatchDetection],
                       composite: int) -> list[FisheyeDetection]:
        cfg = self.config
        if cfg.nms.stage1_enabled:
            patch_dets = nms.stage1_nms(patch_dets, iou_thresh=cfg.nms.stage1_iou)
        sets = self.ensure_exemplars(composite)
        mapped, dropped = boxmap.map_detections(
            patch_dets, sets, k_r=cfg.k_r, scaling_mode=cfg.scaling_mode)
        self.unmapped_count += dropped
        return mapped

    def run_frame(self, image: np.ndarray | None, records: list[dict],
                  composite: int = 0
                  ) -> tuple[list[FisheyeDetection], TimingReport]:
        """Single-composite pipeline: warp, crop, stage-1, map, stage-2."""
        timing = TimingReport()
        if image is not None:
            t0 = time.perf_counter()
            self.build_composite(image, composite)
            timing.warp_ms = (time.perf_counter() - t0) * 1000
        patch_dets = self.ingest(records, composite)
        t0 = time.perf_counter()
        mapped = self._map_composite(patch_dets, composite)
        timing.mapping_ms = (time.perf_counter() - t0) * 1000
        t0 = time.perf_counter()
        final = nms.stage2_nms(mapped, self.config.camera, self.config.nms,
                               image_width=self.config.image_width)
        timing.nms_ms = (time.perf_counter() - t0) * 1000
        return final, timing

    def run_frame_tta(self, image: np.ndarray | None, records: list[dict]
                      ) -> tuple[list[FisheyeDetection], TimingReport]:
        """Two-composite pipeline: union of mapped boxes, one stage-2 pass."""
        timing = TimingReport()
        if image is not None:
            t0 = time.perf_counter()
            self.build_composite(image, 0)
            self.build_composite(image, 1)
            timing.warp_ms = (time.perf_counter() - t0) * 1000
        t0 = time.perf_counter()
        mapped: list[FisheyeDetection] = []
        for composite in (0, 1):
            recs = [r for r in records if r["composite_id"] == composite]
            mapped.extend(self._map_composite(self.ingest(recs, composite),
                                              composite))
        timing.mapping_ms = (time.perf_counter() - t0) * 1000
        t0 = time.perf_counter()
        final = nms.stage2_nms(mapped, self.config.camera, self.config.nms,
                               image_width=self.config.image_width)
        timing.nms_ms = (time.perf_counter() - t0) * 1000
        return final, timing

    def run_synthetic(self, scene: SyntheticScene, tta: bool = False,
                      min_visible_frac: float = 0.3
                      ) -> tuple[list[FisheyeDetection], GroundTruth, TimingReport]:
        """Render a scene, stand in perfect detections, run the pipeline."""
        image, gt = synth.render_fisheye(scene, self.config.camera)
        records = []
        for composite in ((0, 1) if tta else (0,)):
            dets = synth.perfect_detections(scene, self.config.camera,
                                            self.layouts[composite],
                                            min_visible_frac=min_visible_frac)
            records.extend(synth.detections_to_composite_records(
                dets, self.layouts[composite], composite_id=composite))
        if tta:
            final, timing = self.run_frame_tta(image, records)
        else:
            final, timing = self.run_frame(image, records)
        return final, gt, timing


def run_external_detector(command: list[str], composite_png: str) -> list[dict]:
    """Spawn a detector command on a composite PNG and parse its stdout.

    The command receives the image path as its last argument and must
    print one detection JSON object per line.
    """
    proc = subprocess.run(command + [composite_png], capture_output=True,
                          text=True)
    if proc.returncode != 0:
        raise DataError(f"detector command failed ({proc.returncode}): "
                        f"{proc.stderr.strip()}")
    records = []
    for line in proc.stdout.splitlines():
        line = line.strip()
        if line:
            records.append(json.loads(line))
    return records


def write_detections_atomic(path, dets_by_image: dict, cam) -> None:
    """Write detection JSONL through a temp file and atomic rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    os.close(fd)
    try:
        boxmap.write_fisheye_detections(tmp, dets_by_image, cam)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
