"""Independent reference implementations used to cross-check the library.

Everything here is deliberately brute force and shares no code with the
package: exhaustive assignment enumeration for matching, a plain-loop
precision-envelope AP, per-pixel raster transforms, and colorsys-based hue
rotation.
"""

from __future__ import annotations

import colorsys
import math

import numpy as np


def box_iou_corners(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter)


def exhaustive_match(dets, gts, iou_thresh=0.5):
    """Best one-to-one assignment under descending-confidence priority.

    dets: list of (class_id, corners, confidence); gts: list of (class_id,
    corners). Enumerates every feasible assignment vector (each detection
    matched to an eligible unused ground truth or left unmatched) and keeps
    the one that is lexicographically best in detection-priority order,
    preferring (matched, higher IoU, lower ground-truth index) at each
    position. Returns tp flags aligned with the input detection order and
    the matched gt index or None per detection.
    """
    n = len(dets)
    ious = [
        [
            box_iou_corners(d[1], g[1]) if d[0] == g[0] else 0.0
            for g in gts
        ]
        for d in dets
    ]
    best_possible = [max(row, default=0.0) for row in ious]
    priority = sorted(range(n), key=lambda i: (-dets[i][2], -best_possible[i], i))

    def options(i, used):
        opts = [None]
        for j in range(len(gts)):
            if j not in used and ious[i][j] >= iou_thresh:
                opts.append(j)
        return opts

    best_vector = None
    best_key = None
    stack = [((), frozenset())]
    while stack:
        vector, used = stack.pop()
        depth = len(vector)
        if depth == n:
            key = tuple(
                (1, ious[priority[k]][j], -j) if (j := vector[k]) is not None else (0, 0.0, 0)
                for k in range(n)
            )
            if best_key is None or key > best_key:
                best_key = key
                best_vector = vector
            continue
        i = priority[depth]
        for j in options(i, used):
            stack.append((vector + (j,), used | {j} if j is not None else used))

    assignment = [None] * n
    for k, j in enumerate(best_vector):
        assignment[priority[k]] = j
    tp = [j is not None for j in assignment]
    return tp, assignment


def envelope_ap(points, n_gt):
    """All-points AP from raw (recall, precision) points via a literal
    'max precision at recall >= r' envelope."""
    if n_gt < 1:
        raise ValueError("needs ground truth")
    if not points:
        return 0.0
    recalls = sorted({r for r, _ in points})
    ap = 0.0
    prev_r = 0.0
    for r in recalls:
        p_env = max(p for rr, p in points if rr >= r)
        ap += (r - prev_r) * p_env
        prev_r = r
    return ap


def ap_from_outcomes(confidences, tp_flags, n_gt):
    """Cumulative PR points from scratch, then the envelope area."""
    order = sorted(range(len(confidences)), key=lambda i: (-confidences[i], i))
    tp = 0
    fp = 0
    points = []
    for i in order:
        if tp_flags[i]:
            tp += 1
        else:
            fp += 1
        points.append((tp / n_gt, tp / (tp + fp)))
    return envelope_ap(points, n_gt)


def rotate_point(x, y, cx, cy, theta_deg):
    """Clockwise-on-screen rotation in y-down image coordinates."""
    rad = math.radians(theta_deg)
    dx, dy = x - cx, y - cy
    return (
        cx + dx * math.cos(rad) - dy * math.sin(rad),
        cy + dx * math.sin(rad) + dy * math.cos(rad),
    )


def envelope_of_rotated_box(corners, theta_deg, width, height):
    x0, y0, x1, y1 = corners
    pts = [
        rotate_point(x, y, width / 2.0, height / 2.0, theta_deg)
        for x, y in ((x0, y0), (x1, y0), (x1, y1), (x0, y1))
    ]
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    return min(xs), min(ys), max(xs), max(ys)


def orient_pixels(image, code):
    """Per-pixel loop implementation of the eight orientation transforms."""
    h, w = image.shape[:2]
    if code in (1, 2, 3, 4):
        out = np.zeros_like(image)
    else:
        out = np.zeros((w, h) + image.shape[2:], dtype=image.dtype)
    for y in range(h):
        for x in range(w):
            if code == 1:
                out[y, x] = image[y, x]
            elif code == 2:
                out[y, w - 1 - x] = image[y, x]
            elif code == 3:
                out[h - 1 - y, w - 1 - x] = image[y, x]
            elif code == 4:
                out[h - 1 - y, x] = image[y, x]
            elif code == 5:
                out[x, y] = image[y, x]
            elif code == 6:
                out[x, h - 1 - y] = image[y, x]
            elif code == 7:
                out[w - 1 - x, h - 1 - y] = image[y, x]
            elif code == 8:
                out[w - 1 - x, y] = image[y, x]
    return out


def hue_rotate_pixel(r, g, b, delta_deg):
    h, s, v = colorsys.rgb_to_hsv(r / 255.0, g / 255.0, b / 255.0)
    r2, g2, b2 = colorsys.hsv_to_rgb((h + delta_deg / 360.0) % 1.0, s, v)
    return round(r2 * 255), round(g2 * 255), round(b2 * 255)
