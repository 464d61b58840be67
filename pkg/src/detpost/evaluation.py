"""Detection-quality metrics: matching, precision/recall, AP and mAP.

Detections are ``(image_id, Detection)`` pairs. Matching is greedy per image
and class in descending score order; AP uses the 101-point interpolated
precision envelope unless ``method="trapezoid"`` is requested.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import Box, iou_matrix
from .nms import Detection

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
AP_METHODS = ("coco101", "trapezoid")


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    box: Box
    class_id: int


@dataclass
class PRCurve:
    points: list[tuple[float, float]]  # (recall, precision), one per score cutoff
    class_id: int
    iou_threshold: float

    @property
    def recall(self) -> np.ndarray:
        return np.array([p[0] for p in self.points], dtype=np.float64)

    @property
    def precision(self) -> np.ndarray:
        return np.array([p[1] for p in self.points], dtype=np.float64)


@dataclass
class ClassMetrics:
    ap50: float
    ap50_95: float
    precision: float
    recall: float
    n_gt: int = 0
    n_det: int = 0
    ap_by_threshold: dict[float, float] = field(default_factory=dict)


@dataclass
class EvalReport:
    per_class: dict[int, ClassMetrics]
    map50: float
    map50_95: float
    iou_thresholds: tuple[float, ...] = COCO_THRESHOLDS
    curves: dict[tuple[int, float], PRCurve] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "iou_thresholds": list(self.iou_thresholds),
            "map50": self.map50,
            "map50_95": self.map50_95,
            "per_class": {
                str(c): {
                    "ap50": m.ap50,
                    "ap50_95": m.ap50_95,
                    "precision": m.precision,
                    "recall": m.recall,
                    "n_gt": m.n_gt,
                    "n_det": m.n_det,
                    "ap_by_threshold": {f"{t:.2f}": v for t, v in m.ap_by_threshold.items()},
                }
                for c, m in sorted(self.per_class.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def format_table(self, class_names: dict[int, str] | None = None) -> str:
        names = class_names or {}
        rows = [("Class", "Precision", "Recall", "AP", "AP 50-95")]
        for c, m in sorted(self.per_class.items()):
            rows.append((names.get(c, str(c)), f"{m.precision:.3f}", f"{m.recall:.3f}",
                         f"{m.ap50:.3f}", f"{m.ap50_95:.3f}"))
        if self.per_class:
            ms = list(self.per_class.values())
            rows.append(("all", f"{np.mean([m.precision for m in ms]):.3f}",
                         f"{np.mean([m.recall for m in ms]):.3f}",
                         f"{self.map50:.3f}", f"{self.map50_95:.3f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = ["  ".join(cell.rjust(w) if k else cell.ljust(w)
                           for k, (cell, w) in enumerate(zip(r, widths))) for r in rows]
        return "\n".join(lines) + "\n"


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    """Precision and recall from raw counts, with 0 for an empty denominator."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return precision, recall


def _ranked(dets: Sequence[tuple[str, Detection]]) -> list[int]:
    # stable: equal scores keep input order
    return sorted(range(len(dets)), key=lambda i: -dets[i][1].score)


def _index_gts(gts: Iterable[GroundTruth]) -> dict[tuple[str, int], np.ndarray]:
    grouped: dict[tuple[str, int], list[tuple[float, ...]]] = defaultdict(list)
    for g in gts:
        grouped[(g.image_id, g.class_id)].append(g.box.as_tuple())
    return {key: np.array(rows, dtype=np.float64) for key, rows in grouped.items()}


def _match_flags(dets: Sequence[tuple[str, Detection]], gt_index: dict[tuple[str, int], np.ndarray],
                 iou_threshold: float) -> np.ndarray:
    """TP flag per detection (input order) under greedy score-ordered claiming."""
    by_key: dict[tuple[str, int], list[int]] = defaultdict(list)
    for i in _ranked(dets):
        image_id, d = dets[i]
        by_key[(image_id, d.class_id)].append(i)

    flags = np.zeros(len(dets), dtype=bool)
    for key, idxs in by_key.items():
        gt_boxes = gt_index.get(key)
        if gt_boxes is None:
            continue
        det_boxes = np.array([dets[i][1].box.as_tuple() for i in idxs], dtype=np.float64)
        ious = iou_matrix(det_boxes, gt_boxes)
        claimed = np.zeros(len(gt_boxes), dtype=bool)
        for row, i in enumerate(idxs):
            cand = np.where(claimed, -1.0, ious[row])
            g = int(np.argmax(cand))
            if cand[g] >= iou_threshold:
                claimed[g] = True
                flags[i] = True
    return flags


def match_detections(dets: Sequence[tuple[str, Detection]], gts: Sequence[GroundTruth],
                     iou_threshold: float = 0.5) -> list[tuple[int, bool]]:
    """Label each detection TP (True) or FP (False), in input order.

    Within one image and class, detections claim ground truths in descending
    score order; each takes the unclaimed ground truth of highest IoU provided
    it reaches ``iou_threshold``.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    flags = _match_flags(dets, _index_gts(gts), iou_threshold)
    return [(i, bool(f)) for i, f in enumerate(flags)]


def count_outcomes(matches: Sequence[tuple[int, bool]], n_gt: int) -> tuple[int, int, int]:
    """``(TP, FP, FN)`` for a match list against ``n_gt`` ground truths."""
    tp = sum(1 for _, f in matches if f)
    return tp, len(matches) - tp, n_gt - tp


def pr_curve(tp_flags_ranked: Sequence[bool], n_gt: int, class_id: int = 0,
             iou_threshold: float = 0.5, scores: Sequence[float] | None = None) -> PRCurve:
    """Cumulative precision/recall after each detection in ranked order.

    With ``scores`` (ranked, descending), tied detections form one cutoff: only
    the point after the last of each run of equal scores is kept, since no
    score threshold can separate them.
    """
    flags = np.asarray(tp_flags_ranked, dtype=bool)
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    precision = tp / np.maximum(tp + fp, 1)
    recall = tp / n_gt if n_gt > 0 else np.zeros(len(flags))
    if scores is not None and len(flags):
        s = np.asarray(scores, dtype=np.float64)
        if s.shape != flags.shape:
            raise ValueError("scores and flags must have the same length")
        last = np.append(s[1:] != s[:-1], True)
        precision, recall = precision[last], recall[last]
    return PRCurve(list(zip(recall.tolist(), precision.tolist())), class_id, iou_threshold)


def average_precision(curve: PRCurve, method: str = "coco101") -> float:
    """Area under the interpolated precision envelope of ``curve``.

    ``coco101`` samples the envelope at recall 0, 0.01, ..., 1 and averages;
    ``trapezoid`` integrates the envelope exactly over every cutoff.
    """
    if not curve.points:
        return 0.0
    recall = curve.recall
    envelope = np.maximum.accumulate(curve.precision[::-1])[::-1]
    if method == "coco101":
        samples = np.linspace(0.0, 1.0, 101)
        idx = np.searchsorted(recall, samples, side="left")
        padded = np.append(envelope, 0.0)
        return float(padded[idx].mean())
    if method == "trapezoid":
        # step corners (r_prev, p_k), (r_k, p_k) make the trapezoid rule exact
        r = np.concatenate([[0.0], np.repeat(recall, 2)[:-1]])
        p = np.repeat(envelope, 2)
        return float(np.trapezoid(p, r) if hasattr(np, "trapezoid") else np.trapz(p, r))
    raise ValueError(f"unknown AP method {method!r} (choose from {', '.join(AP_METHODS)})")


def _f1_operating_point(curve: PRCurve) -> tuple[float, float]:
    """Precision and recall at the cutoff that maximizes F1 (first one on ties)."""
    if not curve.points:
        return 0.0, 0.0
    p, r = curve.precision, curve.recall
    f1 = np.where(p + r > 0, 2 * p * r / np.where(p + r > 0, p + r, 1.0), 0.0)
    k = int(np.argmax(f1))
    return float(p[k]), float(r[k])


def evaluate(dets: Sequence[tuple[str, Detection]], gts: Sequence[GroundTruth],
             iou_thresholds: Sequence[float] = COCO_THRESHOLDS,
             method: str = "coco101") -> EvalReport:
    """Per-class AP at every threshold, plus mAP@0.5 and mAP averaged over thresholds.

    ``ap50`` is the AP at 0.5 when 0.5 is among the thresholds, otherwise at
    the first one; ``ap50_95`` averages over all given thresholds. The scalar
    precision/recall per class are taken at the F1-maximizing cutoff of that
    primary threshold. Classes without ground truth are not scored.
    """
    thresholds = tuple(float(t) for t in iou_thresholds)
    if not thresholds:
        raise ValueError("at least one IoU threshold is required")
    for t in thresholds:
        if not (0.0 < t <= 1.0):
            raise ValueError(f"IoU thresholds must lie in (0, 1], got {t}")
    if not gts:
        raise ValueError("cannot evaluate without ground truths")
    primary = 0.5 if any(abs(t - 0.5) < 1e-12 for t in thresholds) else thresholds[0]

    gt_index = _index_gts(gts)
    n_gt: dict[int, int] = defaultdict(int)
    for g in gts:
        n_gt[g.class_id] += 1
    ranked = _ranked(dets)
    per_class_ranked: dict[int, list[int]] = defaultdict(list)
    for i in ranked:
        per_class_ranked[dets[i][1].class_id].append(i)

    flags_by_thr = {t: _match_flags(dets, gt_index, t) for t in thresholds}
    per_class: dict[int, ClassMetrics] = {}
    curves: dict[tuple[int, float], PRCurve] = {}
    for c in sorted(n_gt):
        order = per_class_ranked.get(c, [])
        scores = [dets[i][1].score for i in order]
        aps: dict[float, float] = {}
        for t in thresholds:
            curve = pr_curve(flags_by_thr[t][order], n_gt[c], c, t, scores)
            curves[(c, t)] = curve
            aps[t] = average_precision(curve, method)
        precision, recall = _f1_operating_point(curves[(c, primary)])
        per_class[c] = ClassMetrics(
            ap50=aps[primary],
            ap50_95=float(np.mean(list(aps.values()))),
            precision=precision,
            recall=recall,
            n_gt=n_gt[c],
            n_det=len(order),
            ap_by_threshold=aps,
        )
    map50 = float(np.mean([m.ap50 for m in per_class.values()]))
    map50_95 = float(np.mean([m.ap50_95 for m in per_class.values()]))
    return EvalReport(per_class, map50, map50_95, thresholds, curves)


def pr_curve_csv(curve: PRCurve) -> str:
    lines = ["recall,precision"]
    lines += [f"{r!r},{p!r}" for r, p in curve.points]
    return "\n".join(lines) + "\n"


def parse_thresholds(spec: str) -> tuple[float, ...]:
    """``"coco"`` or a comma-separated list such as ``"0.5,0.75"``."""
    if spec.strip().lower() == "coco":
        return COCO_THRESHOLDS
    values = tuple(float(v) for v in spec.split(",") if v.strip())
    if not values:
        raise ValueError(f"no thresholds in {spec!r}")
    return values
