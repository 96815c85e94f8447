"""Detection evaluation on rotated boxes: average precision and LAMR.

Detections are matched per image, greedily in score order, each to the
unmatched ground-truth box with the highest rotated IOU at or above the
matching threshold.  Operating points are taken at every distinct score
threshold, so the curves contain exactly the achievable (recall,
precision) and (FPPI, miss rate) pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .boxmap import FisheyeDetection
from .geometry import FisheyeCamera
from .rotrect import PolarBox, box_from_dict, box_to_dict, iou_rotated_matrix

DEFAULT_MATCH_IOU = 0.5


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    boxes: tuple


@dataclass(frozen=True)
class EvalResult:
    ap: float
    lamr: float
    pr_curve: tuple          # ((recall, precision), ...) at distinct thresholds
    mr_fppi_curve: tuple     # ((fppi, miss_rate), ...)
    tp: int
    fp: int
    fn: int
    report_threshold: float
    n_images: int
    n_gt: int


def match(dets: list[FisheyeDetection], gt: GroundTruth, cam: FisheyeCamera,
          iou_thresh: float = DEFAULT_MATCH_IOU) -> np.ndarray:
    """Per-detection true-positive labels for a single image."""
    labels = np.zeros(len(dets), dtype=bool)
    if not dets or not gt.boxes:
        return labels
    dvec = np.array([[d.box.center_x, d.box.center_y, d.box.width, d.box.height]
                     for d in dets])
    gvec = np.array([[b.center_x, b.center_y, b.width, b.height]
                     for b in gt.boxes])
    iou = iou_rotated_matrix(dvec, gvec, cam)
    order = np.argsort(-np.array([d.score for d in dets]), kind="stable")
    taken = np.zeros(len(gt.boxes), dtype=bool)
    for i in order:
        row = np.where(taken, -1.0, iou[i])
        j = int(np.argmax(row))
        if row[j] >= iou_thresh:
            taken[j] = True
            labels[i] = True
    return labels


def _operating_points(scored_labels: list[tuple[float, bool]], n_images: int,
                      total_gt: int) -> np.ndarray:
    """(recall, precision, fppi, miss_rate) rows at each distinct threshold.

    Detections sharing a score enter together: every row is an operating
    point an actual score threshold can realize.
    """
    if not scored_labels:
        return np.empty((0, 4))
    arr = sorted(scored_labels, key=lambda x: -x[0])
    rows = []
    tp = fp = 0
    for i, (score, is_tp) in enumerate(arr):
        tp += bool(is_tp)
        fp += not is_tp
        last_of_group = i + 1 == len(arr) or arr[i + 1][0] != score
        if last_of_group:
            recall = tp / total_gt
            rows.append((recall, tp / (tp + fp), fp / n_images, 1.0 - recall))
    return np.array(rows)


def average_precision(scored_labels: list[tuple[float, bool]], total_gt: int,
                      n_images: int = 1,
                      interpolation: str = "all_point") -> float:
    """Area under the interpolated precision-recall curve."""
    if total_gt <= 0:
        raise ValueError("average precision undefined with no ground truth")
    pts = _operating_points(scored_labels, n_images, total_gt)
    if len(pts) == 0:
        return 0.0
    recall = pts[:, 0]
    precision = pts[:, 1]
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if interpolation == "all_point":
        prev = np.concatenate([[0.0], recall[:-1]])
        return float(np.sum((recall - prev) * envelope))
    if interpolation == "eleven_point":
        total = 0.0
        for t in np.linspace(0, 1, 11):
            mask = recall >= t - 1e-12
            total += envelope[mask][0] if mask.any() else 0.0
        return total / 11
    raise ValueError(f"unknown interpolation {interpolation!r}")


def lamr(scored_labels: list[tuple[float, bool]], n_images: int, total_gt: int,
         geometric: bool = False) -> float:
    """Average miss rate at 10 log-spaced FPPI samples in [0.01, 1].

    Each sample takes the lowest miss rate achievable without exceeding
    its FPPI; a detector that outputs nothing scores 1.0 everywhere.
    """
    if total_gt <= 0:
        raise ValueError("LAMR undefined with no ground truth")
    if n_images <= 0:
        raise ValueError("LAMR needs at least one image")
    pts = _operating_points(scored_labels, n_images, total_gt)
    samples = np.logspace(-2, 0, 10)
    mrs = np.empty(10)
    for i, f in enumerate(samples):
        ok = pts[:, 2] <= f if len(pts) else np.zeros(0, dtype=bool)
        mrs[i] = min(pts[ok, 3].min() if ok.any() else 1.0, 1.0)
    if geometric:
        return float(np.exp(np.mean(np.log(np.maximum(mrs, 1e-10)))))
    return float(np.mean(mrs))


def evaluate(dets_by_image: dict, gt_by_image: dict, cam: FisheyeCamera,
             iou_thresh: float = DEFAULT_MATCH_IOU,
             report_threshold: float = 0.2,
             interpolation: str = "all_point",
             lamr_geometric: bool = False) -> EvalResult:
    """Match every image and aggregate AP, LAMR, and threshold counts."""
    total_gt = sum(len(g.boxes) for g in gt_by_image.values())
    if total_gt == 0:
        raise ValueError("evaluation needs at least one ground-truth box")
    n_images = len(gt_by_image)
    scored_labels: list[tuple[float, bool]] = []
    tp_rep = fp_rep = 0
    for image_id, gt in gt_by_image.items():
        dets = dets_by_image.get(image_id, [])
        labels = match(dets, gt, cam, iou_thresh=iou_thresh)
        for det, is_tp in zip(dets, labels):
            scored_labels.append((det.score, bool(is_tp)))
            if det.score >= report_threshold:
                tp_rep += bool(is_tp)
                fp_rep += not is_tp
    pts = _operating_points(scored_labels, n_images, total_gt)
    return EvalResult(
        ap=average_precision(scored_labels, total_gt, n_images=n_images,
                             interpolation=interpolation),
        lamr=lamr(scored_labels, n_images, total_gt, geometric=lamr_geometric),
        pr_curve=tuple((float(r), float(p)) for r, p, _, _ in pts),
        mr_fppi_curve=tuple((float(f), float(m)) for _, _, f, m in pts),
        tp=tp_rep,
        fp=fp_rep,
        fn=total_gt - tp_rep,
        report_threshold=report_threshold,
        n_images=n_images,
        n_gt=total_gt,
    )


def mean_eval(results: list[EvalResult]) -> dict:
    """Averaged AP/LAMR across runs (e.g. the two composite orientations)."""
    return {
        "ap": float(np.mean([r.ap for r in results])),
        "lamr": float(np.mean([r.lamr for r in results])),
        "runs": [{"ap": r.ap, "lamr": r.lamr} for r in results],
    }


def result_to_dict(result: EvalResult) -> dict:
    return {
        "ap": result.ap,
        "lamr": result.lamr,
        "tp": result.tp,
        "fp": result.fp,
        "fn": result.fn,
        "report_threshold": result.report_threshold,
        "n_images": result.n_images,
        "n_gt": result.n_gt,
        "pr_curve": [list(p) for p in result.pr_curve],
        "mr_fppi_curve": [list(p) for p in result.mr_fppi_curve],
    }


def write_report(path, result: EvalResult) -> None:
    with open(path, "w") as f:
        json.dump(result_to_dict(result), f, indent=2)


def plot_curves(path, result: EvalResult) -> None:
    """PR and MR-FPPI curves as an SVG figure (matplotlib required)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    if result.pr_curve:
        r, p = zip(*result.pr_curve)
        ax1.plot(r, p, "-o", markersize=2)
    ax1.set_xlabel("recall")
    ax1.set_ylabel("precision")
    ax1.set_xlim(0, 1)
    ax1.set_ylim(0, 1.05)
    ax1.set_title(f"AP = {result.ap:.4f}")
    if result.mr_fppi_curve:
        f, m = zip(*result.mr_fppi_curve)
        ax2.plot(f, m, "-o", markersize=2)
    ax2.set_xscale("log")
    ax2.set_xlabel("FPPI")
    ax2.set_ylabel("miss rate")
    ax2.set_title(f"LAMR = {result.lamr:.4f}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def read_ground_truth(path) -> dict:
    """JSON lines {image_id, boxes: [{cx, cy, w, h}, ...]} -> GroundTruth map."""
    out: dict = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                gt = GroundTruth(
                    image_id=str(d["image_id"]),
                    boxes=tuple(box_from_dict(b) for b in d["boxes"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: malformed ground-truth "
                                 f"line ({e})") from e
            out[gt.image_id] = gt
    return out


def write_ground_truth(path, gts: dict, cam: FisheyeCamera | None = None) -> None:
    with open(path, "w") as f:
        for image_id in sorted(gts):
            gt = gts[image_id]
            f.write(json.dumps({
                "image_id": gt.image_id,
                "boxes": [box_to_dict(b, cam) for b in gt.boxes],
            }) + "\n")


def convert_axis_aligned_gt(path_in, path_out) -> None:
    """Convert corner-format axis-aligned annotations to polar-box lines.

    Input lines are {image_id, boxes: [{x, y, w, h}, ...]} with top-left
    corners.  The box center and extents carry over unchanged; matching
    treats the result like any other rotated box.
    """
    with open(path_in) as fin, open(path_out, "w") as fout:
        for line in fin:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            boxes = [{"cx": b["x"] + b["w"] / 2, "cy": b["y"] + b["h"] / 2,
                      "w": b["w"], "h": b["h"]} for b in d["boxes"]]
            fout.write(json.dumps({"image_id": d["image_id"], "boxes": boxes})
                       + "\n")
