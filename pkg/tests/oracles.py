"""Independent brute-force oracles used to pin expected values in tests.

Everything here is deliberately written from first principles (counting,
enumeration, exhaustive sweeps) and stays independent of the library code
paths it checks.
"""

from __future__ import annotations

import numpy as np


def point_in_rect(points: np.ndarray, center, u, v, half_h, half_w) -> np.ndarray:
    """Mask of points inside a rectangle given by its axes and half-extents."""
    d = points - np.asarray(center)
    return (np.abs(d @ u) <= half_h) & (np.abs(d @ v) <= half_w)


def _polar_axes(center, cam_center):
    d = np.asarray(center, dtype=float) - np.asarray(cam_center, dtype=float)
    n = np.hypot(d[0], d[1])
    if n < 1e-12:
        u = np.array([1.0, 0.0])
    else:
        u = d / n
    return u, np.array([-u[1], u[0]])


def rasterized_iou(box_a, box_b, cam_center, resolution: int = 2000) -> float:
    """Pixel-counting IOU of two polar-aligned boxes.

    The intersection is counted on a ``resolution``^2 grid over the overlap
    of the two axis-aligned bounding boxes; box areas are exact (w*h).
    """
    ua, va = _polar_axes((box_a.center_x, box_a.center_y), cam_center)
    ub, vb = _polar_axes((box_b.center_x, box_b.center_y), cam_center)

    def aabb(box, u, v):
        c = np.array([box.center_x, box.center_y])
        ext = 0.5 * (np.abs(u) * box.height + np.abs(v) * box.width)
        return c - ext, c + ext

    lo_a, hi_a = aabb(box_a, ua, va)
    lo_b, hi_b = aabb(box_b, ub, vb)
    lo = np.maximum(lo_a, lo_b)
    hi = np.minimum(hi_a, hi_b)
    area_a = box_a.width * box_a.height
    area_b = box_b.width * box_b.height
    if np.any(hi <= lo):
        return 0.0
    xs = np.linspace(lo[0], hi[0], resolution, endpoint=False) \
        + (hi[0] - lo[0]) / (2 * resolution)
    ys = np.linspace(lo[1], hi[1], resolution, endpoint=False) \
        + (hi[1] - lo[1]) / (2 * resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    in_a = point_in_rect(pts, (box_a.center_x, box_a.center_y), ua, va,
                         box_a.height / 2, box_a.width / 2)
    in_b = point_in_rect(pts, (box_b.center_x, box_b.center_y), ub, vb,
                         box_b.height / 2, box_b.width / 2)
    cell = (hi[0] - lo[0]) * (hi[1] - lo[1]) / (resolution * resolution)
    inter = float(np.count_nonzero(in_a & in_b)) * cell
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def greedy_match_counts(dets, gts, iou_fn, iou_thresh):
    """(tp, fp) for one image: score-descending greedy matching to best GT."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i][1])
    taken = set()
    tp = fp = 0
    for i in order:
        box, _score = dets[i]
        best_j, best_iou = None, iou_thresh
        for j, g in enumerate(gts):
            if j in taken:
                continue
            v = iou_fn(box, g)
            if v >= best_iou and (best_j is None or v > best_iou):
                best_iou, best_j = v, j
        if best_j is not None:
            taken.add(best_j)
            tp += 1
        else:
            fp += 1
    return tp, fp


def bruteforce_pr_points(dets_by_image, gts_by_image, iou_fn, iou_thresh):
    """All achievable (recall, precision, fppi, missrate) operating points.

    Re-runs the matching from scratch for every distinct score threshold.
    """
    scores = sorted({s for dets in dets_by_image.values() for _, s in dets},
                    reverse=True)
    total_gt = sum(len(g) for g in gts_by_image.values())
    n_images = len(gts_by_image)
    points = []
    for t in scores:
        tp = fp = 0
        for image_id, gts in gts_by_image.items():
            dets = [d for d in dets_by_image.get(image_id, []) if d[1] >= t]
            a, b = greedy_match_counts(dets, gts, iou_fn, iou_thresh)
            tp += a
            fp += b
        recall = tp / total_gt
        precision = tp / (tp + fp) if tp + fp > 0 else 1.0
        points.append((recall, precision, fp / n_images, 1.0 - recall))
    return points


def bruteforce_ap(points) -> float:
    """Area under the precision envelope over recall, from raw PR points."""
    if not points:
        return 0.0
    recalls = sorted({r for r, _, _, _ in points})
    ap = 0.0
    prev_r = 0.0
    for r in recalls:
        p_env = max(p for rr, p, _, _ in points if rr >= r)
        ap += (r - prev_r) * p_env
        prev_r = r
    return ap


def bruteforce_lamr(points, geometric: bool = False) -> float:
    """Average miss rate over 10 log-spaced FPPI samples in [0.01, 1]."""
    samples = np.logspace(-2, 0, 10)
    mrs = []
    for f in samples:
        achievable = [mr for _, _, fppi, mr in points if fppi <= f]
        achievable.append(1.0)  # the empty-detector operating point
        mrs.append(min(achievable))
    if geometric:
        return float(np.exp(np.mean(np.log(np.maximum(mrs, 1e-10)))))
    return float(np.mean(mrs))


def project_cylinder_points(points_xyz: np.ndarray, camera_height: float,
                            cam) -> np.ndarray:
    """Project ground-frame 3D points (x, y, z-above-ground) to fisheye pixels."""
    px = points_xyz[:, 0]
    py = points_xyz[:, 1]
    depth = camera_height - points_xyz[:, 2]
    theta = np.arctan2(np.hypot(px, py), depth)
    rad = cam.radius * theta / cam.max_angle
    psi = np.arctan2(py, px)
    return np.stack([cam.center_x + rad * np.cos(psi),
                     cam.center_y + rad * np.sin(psi)], axis=1)


def random_cylinder_surface(rng, ground_x, ground_y, height, diameter, n):
    """Uniform-ish random points on a cylinder's side surface and both caps."""
    rho = diameter / 2
    side = 2 * np.pi * rho * height
    cap = np.pi * rho * rho
    weights = np.array([side, cap, cap])
    kinds = rng.choice(3, size=n, p=weights / weights.sum())
    ang = rng.uniform(0, 2 * np.pi, size=n)
    rr = rho * np.sqrt(rng.uniform(0, 1, size=n))
    r_pt = np.where(kinds == 0, rho, rr)
    z = np.where(kinds == 0, rng.uniform(0, height, size=n),
                 np.where(kinds == 1, height, 0.0))
    return np.stack([ground_x + r_pt * np.cos(ang),
                     ground_y + r_pt * np.sin(ang), z], axis=1)


def enclosing_polar_box(points_px: np.ndarray, cam_center):
    """Smallest rectangle over projected points, axes at the centroid's polar angle.

    Returns (center_x, center_y, width, height).
    """
    centroid = points_px.mean(axis=0)
    u, v = _polar_axes(centroid, cam_center)
    rel = points_px - np.asarray(cam_center, dtype=float)
    cu = rel @ u
    cv = rel @ v
    lo_u, hi_u = cu.min(), cu.max()
    lo_v, hi_v = cv.min(), cv.max()
    center = np.asarray(cam_center) + 0.5 * (lo_u + hi_u) * u + 0.5 * (lo_v + hi_v) * v
    return float(center[0]), float(center[1]), float(hi_v - lo_v), float(hi_u - lo_u)
