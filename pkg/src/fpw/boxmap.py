"""Map patch-frame detections to fisheye-frame rotated boxes.

A detection's axis-aligned box is compared against the reference boxes of
the patch's exemplar set; the targets of the best-overlapping exemplars
are blended into a rotated fisheye box, and the detection score is scaled
by how well the exemplars contain and overlap the detection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exemplars import ExemplarSet, MappingExemplar
from .geometry import FisheyeCamera, PatchSpec, rel_from_patch_px
from .rotrect import PolarBox, box_from_dict, box_to_dict, from_vec4

SCALING_MODES = ("none", "containment", "overlap", "both")
DEFAULT_K_R = 10
DEFAULT_SCORE_MIN = 0.05


@dataclass(frozen=True)
class PatchDetection:
    """Axis-aligned detection inside one patch, in patch pixels."""

    patch: int
    x0: float
    y0: float
    x1: float
    y1: float
    score: float

    def __post_init__(self):
        if not 0 <= self.score <= 1:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class FisheyeDetection:
    """Scored rotated box in the fisheye frame."""

    box: PolarBox
    score: float


@dataclass(frozen=True)
class ExemplarMatch:
    exemplar: MappingExemplar
    overlap: float
    weight: float


def patch_box_rel01(det: PatchDetection, spec: PatchSpec) -> tuple:
    """Detection box in [0, 1]^2 relative patch coordinates."""
    def cx(u):
        return (rel_from_patch_px(u, spec.width_px) + 1) / 2

    def cy(v):
        return (rel_from_patch_px(v, spec.height_px) + 1) / 2

    return (float(cx(det.x0)), float(cy(det.y0)),
            float(cx(det.x1)), float(cy(det.y1)))


def _iou_one_vs_many(box: tuple, refs: np.ndarray) -> np.ndarray:
    x0, y0, x1, y1 = box
    iw = np.minimum(x1, refs[:, 2]) - np.maximum(x0, refs[:, 0])
    ih = np.minimum(y1, refs[:, 3]) - np.maximum(y0, refs[:, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (x1 - x0) * (y1 - y0) \
        + (refs[:, 2] - refs[:, 0]) * (refs[:, 3] - refs[:, 1]) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def select_exemplars(det: PatchDetection, exemplar_set: ExemplarSet,
                     k_r: int = DEFAULT_K_R) -> list[ExemplarMatch]:
    """Top-k exemplars by reference-box overlap, with normalized weights.

    Exemplars with zero overlap never enter the selection; an empty result
    marks the detection as unmappable.
    """
    if k_r < 1:
        raise ValueError(f"k_r must be >= 1, got {k_r}")
    if len(exemplar_set) == 0:
        return []
    box = patch_box_rel01(det, exemplar_set.spec)
    ious = _iou_one_vs_many(box, exemplar_set.reference_array)
    order = np.argsort(-ious, kind="stable")[:k_r]
    order = order[ious[order] > 0]
    if len(order) == 0:
        return []
    total = float(ious[order].sum())
    return [
        ExemplarMatch(exemplar=exemplar_set.exemplars[i],
                      overlap=float(ious[i]),
                      weight=float(ious[i]) / total)
        for i in order
    ]


def map_box(det: PatchDetection, matches: list[ExemplarMatch]) -> PolarBox:
    """Weighted average of the matched targets' [cx, cy, w, h] vectors."""
    if not matches:
        raise ValueError("cannot map a detection with no exemplar matches")
    vec = np.zeros(4)
    for m in matches:
        t = m.exemplar.target
        vec += m.weight * np.array([t.center_x, t.center_y, t.width, t.height])
    return from_vec4(vec)


def scale_confidence(det: PatchDetection, matches: list[ExemplarMatch],
                     mode: str = "both") -> float:
    """Scale the detection score by containment and overlap quality."""
    if mode not in SCALING_MODES:
        raise ValueError(f"unknown scaling mode {mode!r}; expected {SCALING_MODES}")
    if mode == "none":
        return det.score
    if not matches:
        raise ValueError("cannot scale a detection with no exemplar matches")
    fc_star = sum(m.weight * m.exemplar.containment for m in matches)
    fov_star = sum(m.weight * m.overlap for m in matches)
    s = det.score
    if mode in ("containment", "both"):
        s *= fc_star
    if mode in ("overlap", "both"):
        s *= fov_star
    return s


def map_detections(dets: list[PatchDetection], sets: list[ExemplarSet],
                   k_r: int = DEFAULT_K_R, scaling_mode: str = "both"
                   ) -> tuple[list[FisheyeDetection], int]:
    """Map a batch of patch detections; returns (mapped, dropped_count).

    Detections with no overlapping exemplar are dropped, not errored: they
    sit in regions the person model does not cover.
    """
    out = []
    dropped = 0
    for det in dets:
        matches = select_exemplars(det, sets[det.patch], k_r=k_r)
        if not matches:
            dropped += 1
            continue
        box = map_box(det, matches)
        out.append(FisheyeDetection(box=box,
                                    score=scale_confidence(det, matches,
                                                           mode=scaling_mode)))
    return out, dropped


def read_composite_detections(path, score_min: float = DEFAULT_SCORE_MIN,
                              keep_class: str = "person") -> list[dict]:
    """Read detector output lines, keeping scored boxes of one class.

    Each line is {composite_id, x, y, w, h, score, class} with the box's
    top-left corner and size in composite pixels; an optional image_id
    groups frames for evaluation.
    """
    kept = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                cls = d.get("class", keep_class)
                score = float(d["score"])
                rec = {
                    "composite_id": int(d.get("composite_id", 0)),
                    "image_id": str(d.get("image_id", "0")),
                    "x": float(d["x"]),
                    "y": float(d["y"]),
                    "w": float(d["w"]),
                    "h": float(d["h"]),
                    "score": score,
                }
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: malformed detection line "
                                 f"({e})") from e
            if cls == keep_class and score >= score_min:
                kept.append(rec)
    return kept


def write_fisheye_detections(path, dets_by_image: dict,
                             cam: FisheyeCamera) -> None:
    """One JSON line per fisheye detection: polar box plus score."""
    with open(path, "w") as f:
        for image_id in sorted(dets_by_image):
            for det in dets_by_image[image_id]:
                rec = {"image_id": image_id}
                rec.update(box_to_dict(det.box, cam))
                rec["score"] = det.score
                f.write(json.dumps(rec) + "\n")


def read_fisheye_detections(path) -> dict:
    """Inverse of write_fisheye_detections: image_id -> [FisheyeDetection]."""
    out: dict = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                det = FisheyeDetection(box=box_from_dict(d),
                                       score=float(d["score"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: malformed detection line "
                                 f"({e})") from e
            out.setdefault(str(d.get("image_id", "0")), []).append(det)
    return out
