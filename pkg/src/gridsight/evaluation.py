"""Detection metrics: IoU, greedy matching, PR curves, AP@50, mAP, confusion.

Matching walks detections in descending confidence (ties: larger best IoU,
then input order) and pairs each with the highest-IoU unmatched ground truth
of the same class at or above the IoU threshold. AP uses the exact area under
the monotone precision envelope (all-points interpolation). The confusion
matrix matches class-agnostically so cross-class mistakes land off-diagonal,
with a trailing background row/column for misses and ghosts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MixedFrames, NoEvaluableClasses, NoGroundTruth
from .model import (
    Annotation,
    Detection,
    NormalizedBBox,
    PixelBBox,
    read_label_file,
    read_prediction_file,
)


def _corners(box) -> tuple[float, float, float, float]:
    if isinstance(box, PixelBBox):
        return box.xmin, box.ymin, box.xmax, box.ymax
    if isinstance(box, NormalizedBBox):
        return box.cx - box.w / 2, box.cy - box.h / 2, box.cx + box.w / 2, box.cy + box.h / 2
    raise MixedFrames(f"unsupported box type {type(box).__name__}")


def iou(a, b) -> float:
    """Intersection over union; both boxes must live in the same frame."""
    if type(a) is not type(b):
        raise MixedFrames(f"cannot compare {type(a).__name__} with {type(b).__name__}")
    ax0, ay0, ax1, ay1 = _corners(a)
    bx0, by0, bx1, by1 = _corners(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


@dataclass(frozen=True)
class DetectionOutcome:
    class_id: int
    confidence: float
    is_tp: bool
    matched_gt: int | None  # index into the ground-truth list


@dataclass
class MatchOutcome:
    detections: list[DetectionOutcome]  # aligned with the input detection order
    gt_matched: list[bool]

    def counts(self, class_id: int | None = None) -> tuple[int, int, int]:
        dets = self.detections if class_id is None else [d for d in self.detections if d.class_id == class_id]
        tp = sum(d.is_tp for d in dets)
        fp = len(dets) - tp
        return tp, fp, 0  # FN filled by callers that know the ground truths


def match(
    detections: list[Detection],
    ground_truths: list[Annotation],
    iou_thresh: float = 0.5,
) -> MatchOutcome:
    """Greedy confidence-ordered matching for a single image."""
    ious = [
        [iou(d.box, g.box) if d.class_id == g.class_id else 0.0 for g in ground_truths]
        for d in detections
    ]
    best = [max(row, default=0.0) for row in ious]
    order = sorted(
        range(len(detections)),
        key=lambda i: (-detections[i].confidence, -best[i], i),
    )

    taken = [False] * len(ground_truths)
    outcomes: list[DetectionOutcome | None] = [None] * len(detections)
    for i in order:
        det = detections[i]
        best_gt = None
        best_iou = -1.0
        for j, g in enumerate(ground_truths):
            if taken[j] or g.class_id != det.class_id:
                continue
            v = ious[i][j]
            if v >= iou_thresh and v > best_iou:
                best_gt = j
                best_iou = v
        if best_gt is not None:
            taken[best_gt] = True
            outcomes[i] = DetectionOutcome(det.class_id, det.confidence, True, best_gt)
        else:
            outcomes[i] = DetectionOutcome(det.class_id, det.confidence, False, None)
    return MatchOutcome(detections=list(outcomes), gt_matched=taken)


@dataclass(frozen=True)
class PRPoint:
    precision: float
    recall: float
    threshold: float  # confidence at which the point occurs


def pr_curve(confidences, tp_flags, n_gt: int) -> list[PRPoint]:
    """Cumulative precision/recall walked down the confidence ranking."""
    if n_gt < 1:
        raise NoGroundTruth("precision-recall curve undefined without ground truths")
    conf = np.asarray(confidences, dtype=np.float64)
    tp = np.asarray(tp_flags, dtype=np.float64)
    order = np.argsort(-conf, kind="stable")
    conf = conf[order]
    tp = tp[order]
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    recall = cum_tp / n_gt
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1e-300)
    return [
        PRPoint(precision=float(p), recall=float(r), threshold=float(c))
        for p, r, c in zip(precision, recall, conf)
    ]


def average_precision(confidences, tp_flags, n_gt: int) -> float:
    """Exact area under the stepwise monotone precision envelope."""
    points = pr_curve(confidences, tp_flags, n_gt)
    mrec = np.concatenate(([0.0], [p.recall for p in points], [1.0]))
    mpre = np.concatenate(([0.0], [p.precision for p in points], [0.0]))
    envelope = np.maximum.accumulate(mpre[::-1])[::-1]
    changed = np.nonzero(np.diff(mrec) > 0)[0] + 1
    return float(np.sum((mrec[changed] - mrec[changed - 1]) * envelope[changed]))


@dataclass
class EvalSummary:
    ap_per_class: dict[int, float]
    map50: float
    n_gt_per_class: dict[int, int]
    skipped_classes: list[int] = field(default_factory=list)  # no ground truth
    pr_per_class: dict[int, list[PRPoint]] = field(default_factory=dict)


def evaluate_matches(
    image_pairs: list[tuple[list[Detection], list[Annotation]]],
    n_classes: int,
    iou_thresh: float = 0.5,
) -> EvalSummary:
    """Accumulate per-image matches into per-class AP@threshold and their mean."""
    confs: dict[int, list[float]] = {c: [] for c in range(n_classes)}
    flags: dict[int, list[bool]] = {c: [] for c in range(n_classes)}
    n_gt = {c: 0 for c in range(n_classes)}

    for dets, gts in image_pairs:
        outcome = match(dets, gts, iou_thresh)
        for g in gts:
            n_gt[g.class_id] += 1
        for d in outcome.detections:
            confs[d.class_id].append(d.confidence)
            flags[d.class_id].append(d.is_tp)

    ap: dict[int, float] = {}
    curves: dict[int, list[PRPoint]] = {}
    skipped: list[int] = []
    for c in range(n_classes):
        if n_gt[c] == 0:
            skipped.append(c)
            continue
        ap[c] = average_precision(confs[c], flags[c], n_gt[c])
        curves[c] = pr_curve(confs[c], flags[c], n_gt[c])
    if not ap:
        raise NoEvaluableClasses("no class has ground truth")
    return EvalSummary(
        ap_per_class=ap,
        map50=float(np.mean(list(ap.values()))),
        n_gt_per_class=n_gt,
        skipped_classes=skipped,
        pr_per_class=curves,
    )


@dataclass
class ConfusionMatrix:
    """(K+1) x (K+1) counts; row = ground-truth class, column = predicted,
    last row/column = background."""

    matrix: np.ndarray
    class_names: list[str]
    iou_thresh: float
    conf_thresh: float

    @property
    def background_index(self) -> int:
        return len(self.class_names)

    def merged(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.class_names != other.class_names:
            raise MixedFrames("confusion matrices use different class lists")
        return ConfusionMatrix(
            self.matrix + other.matrix, self.class_names, self.iou_thresh, self.conf_thresh
        )


def confusion(
    detections: list[Detection],
    ground_truths: list[Annotation],
    class_names: list[str],
    iou_thresh: float = 0.5,
    conf_thresh: float = 0.5,
) -> ConfusionMatrix:
    """Class-agnostic greedy confusion matrix for one image."""
    if not 0.0 <= conf_thresh <= 1.0:
        raise ValueError(f"conf_thresh {conf_thresh} outside [0, 1]")
    k = len(class_names)
    m = np.zeros((k + 1, k + 1), dtype=np.int64)
    dets = [d for d in detections if d.confidence >= conf_thresh]

    pairs = []
    for i, d in enumerate(dets):
        for j, g in enumerate(ground_truths):
            v = iou(d.box, g.box)
            if v >= iou_thresh:
                pairs.append((-v, -d.confidence, i, j))
    pairs.sort()

    det_used = [False] * len(dets)
    gt_used = [False] * len(ground_truths)
    for _, _, i, j in pairs:
        if det_used[i] or gt_used[j]:
            continue
        det_used[i] = True
        gt_used[j] = True
        m[ground_truths[j].class_id, dets[i].class_id] += 1
    for j, g in enumerate(ground_truths):
        if not gt_used[j]:
            m[g.class_id, k] += 1
    for i, d in enumerate(dets):
        if not det_used[i]:
            m[k, d.class_id] += 1
    return ConfusionMatrix(matrix=m, class_names=list(class_names), iou_thresh=iou_thresh, conf_thresh=conf_thresh)


def confusion_over_images(
    image_pairs: list[tuple[list[Detection], list[Annotation]]],
    class_names: list[str],
    iou_thresh: float = 0.5,
    conf_thresh: float = 0.5,
) -> ConfusionMatrix:
    total = ConfusionMatrix(
        np.zeros((len(class_names) + 1, len(class_names) + 1), dtype=np.int64),
        list(class_names),
        iou_thresh,
        conf_thresh,
    )
    for dets, gts in image_pairs:
        total = total.merged(confusion(dets, gts, class_names, iou_thresh, conf_thresh))
    return total


def load_directory_pairs(
    gt_dir: str | Path,
    pred_dir: str | Path,
    n_classes: int,
) -> list[tuple[str, list[Detection], list[Annotation]]]:
    """Pair ground-truth and prediction files by basename; a missing side is
    treated as empty."""
    gt_dir, pred_dir = Path(gt_dir), Path(pred_dir)
    stems = sorted(
        {p.stem for p in gt_dir.glob("*.txt")} | {p.stem for p in pred_dir.glob("*.txt")}
    )
    out = []
    for stem in stems:
        gt_path = gt_dir / (stem + ".txt")
        pred_path = pred_dir / (stem + ".txt")
        gts = read_label_file(gt_path, n_classes) if gt_path.exists() else []
        dets = read_prediction_file(pred_path, n_classes) if pred_path.exists() else []
        out.append((stem, dets, gts))
    return out


def render_eval_report(
    summary: EvalSummary, matrix: ConfusionMatrix, class_names: list[str]
) -> str:
    lines = ["Per-class AP@%.2f" % matrix.iou_thresh]
    name_width = max(len(n) for n in class_names + ["class"])
    lines.append(f"{'class':<{name_width}}  {'AP':>6}  {'ground truths':>13}")
    for c, name in enumerate(class_names):
        if c in summary.ap_per_class:
            lines.append(
                f"{name:<{name_width}}  {summary.ap_per_class[c]:>6.3f}  {summary.n_gt_per_class[c]:>13}"
            )
        else:
            lines.append(f"{name:<{name_width}}  {'--':>6}  {0:>13}")
    lines.append("")
    lines.append(f"mAP@{matrix.iou_thresh:.2f}: {summary.map50:.3f}")
    if summary.skipped_classes:
        skipped = ", ".join(class_names[c] for c in summary.skipped_classes)
        lines.append(f"excluded from mAP (no ground truth): {skipped}")
    lines.append("")
    lines.append(f"Confusion matrix (IoU >= {matrix.iou_thresh:.2f}, conf >= {matrix.conf_thresh:.2f})")
    headers = class_names + ["background"]
    col_width = max(max(len(h) for h in headers), 6)
    header = " " * (name_width + 11) + "  ".join(f"{h:>{col_width}}" for h in headers)
    lines.append(header)
    for r, row_name in enumerate(headers):
        cells = "  ".join(f"{int(matrix.matrix[r, c]):>{col_width}}" for c in range(len(headers)))
        lines.append(f"{row_name:<{name_width + 11}}{cells}")
    return "\n".join(lines) + "\n"


def summary_to_dict(summary: EvalSummary, matrix: ConfusionMatrix, class_names: list[str]) -> dict:
    return {
        "iou_thresh": matrix.iou_thresh,
        "conf_thresh": matrix.conf_thresh,
        "map50": summary.map50,
        "ap_per_class": {class_names[c]: v for c, v in summary.ap_per_class.items()},
        "ground_truths_per_class": {class_names[c]: n for c, n in summary.n_gt_per_class.items()},
        "classes_without_ground_truth": [class_names[c] for c in summary.skipped_classes],
        "pr_curves": {
            class_names[c]: [
                {"precision": p.precision, "recall": p.recall, "threshold": p.threshold}
                for p in points
            ]
            for c, points in summary.pr_per_class.items()
        },
        "confusion_matrix": {
            "labels": class_names + ["background"],
            "rows": matrix.matrix.tolist(),
        },
    }
