"""Non-maximum suppression: greedy baseline and matrix-form (weighted) Cluster-NMS.

All variants sort detections by descending score (stable, so ties keep input
order) and return indices into that sorted list. Per-class suppression is the
default; ``class_agnostic=True`` pools every class into one problem.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numba
import numpy as np

from .geometry import Box
from .overlap import OverlapKind, overlap_matrix

VARIANTS = ("greedy", "cluster", "wcluster")
_VARIANT_ALIASES = {"weighted_cluster": "wcluster"}


@dataclass(frozen=True)
class Detection:
    box: Box
    class_id: int
    score: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if int(self.class_id) != self.class_id or self.class_id < 0:
            raise ValueError(f"class_id must be a non-negative integer, got {self.class_id}")


@dataclass(frozen=True)
class NmsConfig:
    kind: OverlapKind = OverlapKind.IOU
    threshold_eps: float = 0.5
    max_iters: int | None = None  # None means one iteration per candidate box
    class_agnostic: bool = False
    score_floor: float = 0.001

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", OverlapKind.parse(self.kind))
        if not math.isfinite(self.threshold_eps):
            raise ValueError("threshold_eps must be finite")
        if self.max_iters is not None and self.max_iters <= 0:
            raise ValueError("max_iters must be positive")
        if not (0.0 <= self.score_floor <= 1.0):
            raise ValueError("score_floor must lie in [0, 1]")


@dataclass
class NmsResult:
    kept: list[Detection]
    kept_indices: list[int]
    iterations_used: int = 0
    converged: bool = True
    # positions of the kept detections in the caller's original list
    source_indices: list[int] = field(default_factory=list)


@numba.njit(cache=True)
def _greedy_keep(x, eps):
    n = x.shape[0]
    keep = np.ones(n, dtype=np.bool_)
    for i in range(n):
        if not keep[i]:
            continue
        for j in range(i + 1, n):
            if keep[j] and x[i, j] > eps:
                keep[j] = False
    return keep


def _cluster_keep(x: np.ndarray, eps: float, max_iters: int) -> tuple[np.ndarray, int, bool]:
    """Iterate the row-masked column-max rule to a fixed point.

    Returns the keep mask, the iteration at which it stopped changing and
    whether that happened within ``max_iters``.
    """
    n = len(x)
    # only strictly upper entries from kept rows may suppress a column
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    b = np.ones(n, dtype=bool)
    for t in range(1, max_iters + 1):
        c = np.where(upper & b[:, None], x, -np.inf)
        g = c.max(axis=0)
        b_next = g < eps
        if np.array_equal(b_next, b):
            return b_next, t, True
        b = b_next
    return b, max_iters, False


def _merge_coordinates(x: np.ndarray, keep: np.ndarray, boxes: np.ndarray,
                       scores: np.ndarray, eps: float) -> np.ndarray:
    """Score- and overlap-weighted average of each kept box and its cluster."""
    n = len(x)
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    contributes = upper & keep[:, None] & (x >= eps)
    w = np.where(contributes, x * scores[None, :], 0.0)
    w[np.arange(n), np.arange(n)] = np.where(keep, scores, 0.0)
    totals = w.sum(axis=1)
    merged = boxes.copy()
    # boxes with no cluster members keep their exact coordinates
    rows = keep & (totals > 0) & contributes.any(axis=1)
    merged[rows] = (w[rows] @ boxes) / totals[rows, None]
    return merged


def _suppress_group(boxes: np.ndarray, scores: np.ndarray, variant: str,
                    cfg: NmsConfig) -> tuple[np.ndarray, np.ndarray, int, bool]:
    """Run one variant on boxes already sorted by descending score."""
    n = len(boxes)
    if variant == "greedy":
        x = overlap_matrix(boxes, OverlapKind.IOU)
        return _greedy_keep(x, cfg.threshold_eps), boxes, 0, True
    x = overlap_matrix(boxes, cfg.kind)
    max_iters = cfg.max_iters if cfg.max_iters is not None else max(n, 1)
    keep, t, converged = _cluster_keep(x, cfg.threshold_eps, max_iters)
    if variant == "wcluster":
        return keep, _merge_coordinates(x, keep, boxes, scores, cfg.threshold_eps), t, converged
    return keep, boxes, t, converged


def _check_variant(variant: str) -> str:
    variant = _VARIANT_ALIASES.get(variant, variant)
    if variant not in VARIANTS:
        raise ValueError(f"unknown NMS variant {variant!r} (choose from {', '.join(VARIANTS)})")
    return variant


def run_nms(dets: Sequence[Detection], cfg: NmsConfig | None = None,
            variant: str = "greedy") -> NmsResult:
    """Apply one NMS variant to a single image's detections."""
    cfg = cfg or NmsConfig()
    variant = _check_variant(variant)
    source = [i for i, d in enumerate(dets) if d.score >= cfg.score_floor]
    if not source:
        return NmsResult([], [], 0, True, [])

    scores = np.array([dets[i].score for i in source], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    source = [source[i] for i in order]
    scores = scores[order]
    boxes = np.array([dets[i].box.as_tuple() for i in source], dtype=np.float64)
    classes = np.array([dets[i].class_id for i in source], dtype=np.int64)

    if cfg.class_agnostic:
        groups = [np.arange(len(source))]
    else:
        groups = [np.flatnonzero(classes == c) for c in np.unique(classes)]

    keep = np.zeros(len(source), dtype=bool)
    out_boxes = boxes.copy()
    iterations = 0
    converged = True
    for idx in groups:
        k, merged, t, ok = _suppress_group(boxes[idx], scores[idx], variant, cfg)
        keep[idx] = k
        out_boxes[idx] = merged
        iterations = max(iterations, t)
        converged = converged and ok
    if not converged:
        warnings.warn(f"cluster NMS did not converge within {cfg.max_iters} iterations",
                      RuntimeWarning, stacklevel=2)

    kept_indices = np.flatnonzero(keep).tolist()
    if variant == "wcluster":
        rows = out_boxes[kept_indices].tolist()
        kept = [Detection(Box(*row), dets[source[i]].class_id, dets[source[i]].score)
                for i, row in zip(kept_indices, rows)]
    else:
        kept = [dets[source[i]] for i in kept_indices]
    return NmsResult(kept, kept_indices, iterations, converged,
                     [source[i] for i in kept_indices])


def greedy_nms(dets: Sequence[Detection], cfg: NmsConfig | None = None) -> NmsResult:
    """Classical greedy NMS on plain IoU; ``cfg.kind`` is ignored."""
    return run_nms(dets, cfg, "greedy")


def cluster_nms(dets: Sequence[Detection], cfg: NmsConfig | None = None) -> NmsResult:
    return run_nms(dets, cfg, "cluster")


def weighted_cluster_nms(dets: Sequence[Detection], cfg: NmsConfig | None = None) -> NmsResult:
    """Cluster-NMS followed by weighted coordinate merging of each kept box."""
    return run_nms(dets, cfg, "wcluster")


def _run_image(args):
    image_id, dets, cfg, variant = args
    try:
        return image_id, run_nms(dets, cfg, variant)
    except Exception as exc:
        raise RuntimeError(f"NMS failed on image {image_id!r}: {exc}") from exc


def batched_nms(per_image: Sequence[tuple[Hashable, Sequence[Detection]]],
                cfg: NmsConfig | None = None, variant: str = "greedy",
                jobs: int = 1) -> list[tuple[Hashable, NmsResult]]:
    """Run a variant independently on every image, preserving input order."""
    cfg = cfg or NmsConfig()
    variant = _check_variant(variant)
    tasks = [(image_id, dets, cfg, variant) for image_id, dets in per_image]
    if jobs <= 1 or len(tasks) < 2:
        return [_run_image(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_image, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
