"""Two-stage non-maxima suppression for the detection pipeline.

Stage 1 runs per patch on axis-aligned boxes with a high IOU threshold,
removing near-duplicates cheaply before the costlier rotated-box stage.
Stage 2 runs in the fisheye frame and offers three methods: hard greedy
suppression, Gaussian score-decay suppression, and mean-shift bounding box
refinement.  Ties in score break toward the lower input index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxmap import FisheyeDetection, PatchDetection
from .geometry import FisheyeCamera
from .rotrect import from_vec4, iou_rotated_matrix

STAGE2_METHODS = ("hard", "gnms", "bbr")


@dataclass(frozen=True)
class NmsConfig:
    stage1_enabled: bool = True
    stage1_iou: float = 0.8
    stage2_method: str = "gnms"
    hard_iou: float = 0.45
    a_g: float = 0.2
    bbr_kernel_frac: float = 0.04
    score_floor: float = 0.001

    def __post_init__(self):
        if not 0 < self.stage1_iou <= 1 or not 0 < self.hard_iou <= 1:
            raise ValueError("IOU thresholds must be in (0, 1]")
        if self.a_g <= 0:
            raise ValueError("a_g must be positive")
        if self.stage2_method not in STAGE2_METHODS:
            raise ValueError(f"stage2_method must be one of {STAGE2_METHODS}")


def _axis_aligned_iou_matrix(boxes: np.ndarray) -> np.ndarray:
    x0, y0, x1, y1 = boxes.T
    iw = np.minimum(x1[:, None], x1[None, :]) - np.maximum(x0[:, None], x0[None, :])
    ih = np.minimum(y1[:, None], y1[None, :]) - np.maximum(y0[:, None], y0[None, :])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area = (x1 - x0) * (y1 - y0)
    union = area[:, None] + area[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def _greedy_keep(scores: np.ndarray, iou: np.ndarray, thresh: float) -> list[int]:
    order = np.argsort(-scores, kind="stable")
    keep: list[int] = []
    for i in order:
        if all(iou[i, j] < thresh for j in keep):
            keep.append(int(i))
    return keep


def stage1_nms(dets: list[PatchDetection],
               iou_thresh: float = 0.8) -> list[PatchDetection]:
    """Greedy suppression per patch on axis-aligned boxes."""
    by_patch: dict[int, list[PatchDetection]] = {}
    for d in dets:
        by_patch.setdefault(d.patch, []).append(d)
    out: list[PatchDetection] = []
    for patch in sorted(by_patch):
        group = by_patch[patch]
        boxes = np.array([[d.x0, d.y0, d.x1, d.y1] for d in group])
        scores = np.array([d.score for d in group])
        iou = _axis_aligned_iou_matrix(boxes)
        keep = sorted(_greedy_keep(scores, iou, iou_thresh))
        out.extend(group[i] for i in keep)
    return out


def _vec4_scores(dets: list[FisheyeDetection]) -> tuple[np.ndarray, np.ndarray]:
    vec = np.array([[d.box.center_x, d.box.center_y, d.box.width, d.box.height]
                    for d in dets]).reshape(len(dets), 4)
    scores = np.array([d.score for d in dets])
    return vec, scores


def hard_nms_fisheye(dets: list[FisheyeDetection], cam: FisheyeCamera,
                     iou_thresh: float = 0.45) -> list[FisheyeDetection]:
    """Greedy suppression with exact rotated-box IOU."""
    if not dets:
        return []
    vec, scores = _vec4_scores(dets)
    iou = iou_rotated_matrix(vec, vec, cam)
    keep = _greedy_keep(scores, iou, iou_thresh)
    return [dets[i] for i in keep]


def gaussian_soft_nms(dets: list[FisheyeDetection], cam: FisheyeCamera,
                      a_g: float = 0.2,
                      score_floor: float = 0.001) -> list[FisheyeDetection]:
    """Gaussian score-decay suppression on rotated boxes.

    Repeatedly moves the current highest-scoring detection to the output
    and multiplies every remaining score by exp(-iou^2 / a_g) against it;
    detections ending below ``score_floor`` are dropped.  Output order is
    the selection order.
    """
    if not dets:
        return []
    vec, scores = _vec4_scores(dets)
    iou = iou_rotated_matrix(vec, vec, cam)
    scores = scores.copy()
    remaining = np.ones(len(dets), dtype=bool)
    out: list[FisheyeDetection] = []
    for _ in range(len(dets)):
        masked = np.where(remaining, scores, -np.inf)
        i = int(np.argmax(masked))
        remaining[i] = False
        out.append(FisheyeDetection(box=dets[i].box, score=float(scores[i])))
        scores[remaining] *= np.exp(-iou[i, remaining] ** 2 / a_g)
    return [d for d in out if d.score >= score_floor]


def bbr(dets: list[FisheyeDetection], cam: FisheyeCamera,
        kernel_radius_px: float, max_iter: int = 100,
        shift_tol: float = 0.01) -> list[FisheyeDetection]:
    """Bounding box refinement: mean-shift clustering of box centers.

    Centers move to the mean of all input centers within the binary
    hyper-spherical kernel until convergence; each cluster's boxes combine
    into one by score-weighted averaging, keeping the maximum score.
    """
    if not dets:
        return []
    vec, scores = _vec4_scores(dets)
    data = vec[:, :2]
    pos = data.copy()
    for _ in range(max_iter):
        d2 = ((pos[:, None, :] - data[None, :, :]) ** 2).sum(axis=2)
        near = d2 <= kernel_radius_px ** 2
        new_pos = (near[:, :, None] * data[None, :, :]).sum(axis=1) \
            / near.sum(axis=1)[:, None]
        shift = np.hypot(*(new_pos - pos).T).max()
        pos = new_pos
        if shift < shift_tol:
            break

    # group converged positions into modes; assign each box to the nearest
    modes: list[np.ndarray] = []
    merge_tol = max(10 * shift_tol, 1e-6)
    for p in pos:
        if not any(np.hypot(*(p - m)) <= merge_tol for m in modes):
            modes.append(p)
    mode_arr = np.array(modes)
    assign = np.argmin(
        ((pos[:, None, :] - mode_arr[None, :, :]) ** 2).sum(axis=2), axis=1)

    out: list[FisheyeDetection] = []
    for ci in range(len(modes)):
        members = np.flatnonzero(assign == ci)
        w = scores[members]
        combined = (w[:, None] * vec[members]).sum(axis=0) / w.sum()
        out.append(FisheyeDetection(box=from_vec4(combined),
                                    score=float(w.max())))
    out.sort(key=lambda d: -d.score)
    return out


def stage2_nms(dets: list[FisheyeDetection], cam: FisheyeCamera,
               config: NmsConfig, image_width: float) -> list[FisheyeDetection]:
    """Dispatch to the configured fisheye-frame method."""
    if config.stage2_method == "hard":
        return hard_nms_fisheye(dets, cam, iou_thresh=config.hard_iou)
    if config.stage2_method == "gnms":
        return gaussian_soft_nms(dets, cam, a_g=config.a_g,
                                 score_floor=config.score_floor)
    return bbr(dets, cam, kernel_radius_px=config.bbr_kernel_frac * image_width)
