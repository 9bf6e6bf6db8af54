"""Validation-side AP@50 used for the per-epoch metrics stream.

Confidence-ordered greedy matching against same-class ground truths at
IoU >= 0.5, then exact area under the monotone precision envelope.
"""

from __future__ import annotations

import numpy as np


def box_iou(a: np.ndarray, b: np.ndarray) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return float(inter / (area_a + area_b - inter))


def ap50_per_class(
    predictions: list[dict],
    targets: list[dict],
    n_classes: int,
    iou_thresh: float = 0.5,
) -> dict[int, float]:
    """predictions/targets: per-image dicts of numpy ``boxes``/``labels`` (and
    ``scores`` for predictions), labels in 0..K-1."""
    confs: dict[int, list[float]] = {c: [] for c in range(n_classes)}
    flags: dict[int, list[bool]] = {c: [] for c in range(n_classes)}
    n_gt = {c: 0 for c in range(n_classes)}

    for pred, gt in zip(predictions, targets):
        for cls in gt["labels"]:
            n_gt[int(cls)] += 1
        order = np.argsort(-pred["scores"], kind="stable")
        taken = np.zeros(len(gt["labels"]), dtype=bool)
        for i in order:
            cls = int(pred["labels"][i])
            best_j, best_v = -1, -1.0
            for j in range(len(gt["labels"])):
                if taken[j] or int(gt["labels"][j]) != cls:
                    continue
                v = box_iou(pred["boxes"][i], gt["boxes"][j])
                if v >= iou_thresh and v > best_v:
                    best_j, best_v = j, v
            confs[cls].append(float(pred["scores"][i]))
            if best_j >= 0:
                taken[best_j] = True
                flags[cls].append(True)
            else:
                flags[cls].append(False)

    out = {}
    for c in range(n_classes):
        if n_gt[c] == 0:
            continue
        out[c] = _average_precision(confs[c], flags[c], n_gt[c])
    return out


def _average_precision(confs, flags, n_gt) -> float:
    if not confs:
        return 0.0
    order = np.argsort(-np.asarray(confs), kind="stable")
    tp = np.asarray(flags, dtype=np.float64)[order]
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    recall = cum_tp / n_gt
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1e-300)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    envelope = np.maximum.accumulate(mpre[::-1])[::-1]
    changed = np.nonzero(np.diff(mrec) > 0)[0] + 1
    return float(np.sum((mrec[changed] - mrec[changed - 1]) * envelope[changed]))
