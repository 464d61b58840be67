"""Anchor-box estimation from ground-truth box dimensions.

The hierarchical path clusters ``(w, h)`` points agglomeratively with Ward's
minimum-variance linkage and cuts the tree at exactly ``k`` clusters; each
anchor is the mean of one cluster. K-Means and K-Means++ are provided as
baselines, and ``anchor_fitness`` reports the recall achievable by an anchor
set when shapes are compared co-centered.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import BoxWH, dims_to_array

DEFAULT_K = 9
METHODS = ("hc", "kmeans", "kmeanspp")


@dataclass(frozen=True)
class AnchorSet:
    anchors: tuple[BoxWH, ...]
    method: str
    k: int

    def as_array(self) -> np.ndarray:
        return dims_to_array(list(self.anchors))


@dataclass(frozen=True)
class LinkageStep:
    """One agglomeration; clusters ``0..n-1`` are leaves, step ``s`` creates ``n + s``."""

    left: int
    right: int
    distance: float
    size: int


@dataclass(frozen=True)
class FitnessReport:
    achievable_recall: float
    matched: int
    total: int
    match_threshold: float


def _as_points(boxes: Sequence[BoxWH] | np.ndarray, k: int) -> np.ndarray:
    pts = dims_to_array(boxes)
    if len(pts) == 0:
        raise ValueError("no boxes to cluster")
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if k > len(pts):
        raise ValueError(f"k={k} exceeds the number of boxes ({len(pts)})")
    return pts


def _make_anchor_set(centers: np.ndarray, method: str) -> AnchorSet:
    order = np.argsort(centers[:, 0] * centers[:, 1], kind="stable")
    anchors = tuple(BoxWH(float(w), float(h)) for w, h in centers[order])
    return AnchorSet(anchors, method, len(anchors))


def ward_linkage(points: np.ndarray) -> list[LinkageStep]:
    """Full Ward agglomeration of ``points`` (shape ``(n, d)``).

    Works on squared merge costs through the Lance-Williams update and reports
    heights as their square roots, so a merge of clusters ``a`` and ``b`` sits
    at ``sqrt(2 |a| |b| / (|a| + |b|)) * ||mean_a - mean_b||``. The cheapest
    pair is merged at each step; ties go to the smallest ``(slot, slot)`` pair
    where a merged cluster takes over the lower slot of its two children.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n < 2:
        return []
    d = np.zeros((n, n))
    for col in pts.T:
        d += (col[:, None] - col[None, :]) ** 2
    d[np.arange(n), np.arange(n)] = np.inf

    active = np.ones(n, dtype=bool)
    sizes = np.ones(n, dtype=np.float64)
    labels = np.arange(n)
    # row-minimum cache over columns to the right of each slot
    nn = np.zeros(n, dtype=np.int64)
    nn_dist = np.full(n, np.inf)

    def refresh(p: int) -> None:
        row = d[p, p + 1:]
        if len(row) == 0:
            nn_dist[p] = np.inf
            return
        q = int(np.argmin(row))
        nn[p] = p + 1 + q
        nn_dist[p] = row[q]

    for p in range(n - 1):
        refresh(p)
    nn_dist[n - 1] = np.inf

    steps: list[LinkageStep] = []
    for s in range(n - 1):
        i = int(np.argmin(nn_dist))
        j = int(nn[i])
        cost = d[i, j]
        steps.append(LinkageStep(int(labels[i]), int(labels[j]), float(np.sqrt(cost)),
                                 int(sizes[i] + sizes[j])))

        ni, nj = sizes[i], sizes[j]
        nk = sizes
        new_row = ((ni + nk) * d[i] + (nj + nk) * d[j] - nk * cost) / (ni + nj + nk)
        new_row[~active] = np.inf
        new_row[i] = np.inf
        new_row[j] = np.inf
        d[i, :] = new_row
        d[:, i] = new_row
        d[j, :] = np.inf
        d[:, j] = np.inf
        active[j] = False
        sizes[i] = ni + nj
        labels[i] = n + s
        nn_dist[j] = np.inf

        refresh(i)
        left = active.copy()
        left[i:] = False
        stale = active & ((nn == j) | (left & (nn == i)))
        stale[i] = False
        better = left & ~stale & ((new_row < nn_dist) | ((new_row == nn_dist) & (nn > i)))
        nn[better] = i
        nn_dist[better] = new_row[better]
        for p in np.flatnonzero(stale):
            refresh(int(p))
    return steps


def cut_tree(n: int, steps: Sequence[LinkageStep], k: int) -> np.ndarray:
    """Flatten a linkage into ``k`` clusters by replaying the first ``n - k`` merges.

    Cluster labels are numbered by first appearance in point order.
    """
    parent = list(range(2 * n - 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for s, step in enumerate(steps[: n - k]):
        parent[find(step.left)] = n + s
        parent[find(step.right)] = n + s
    roots = [find(p) for p in range(n)]
    remap: dict[int, int] = {}
    return np.array([remap.setdefault(r, len(remap)) for r in roots], dtype=np.int64)


def hc_anchors(boxes: Sequence[BoxWH] | np.ndarray, k: int = DEFAULT_K,
               image_size: tuple[float, float] | None = None) -> tuple[AnchorSet, list[LinkageStep]]:
    """Ward-linkage anchors cut at exactly ``k`` clusters.

    ``image_size`` optionally rescales widths and heights to ``[0, 1]`` before
    clustering; anchors are then reported in the same normalized units.
    """
    pts = _as_points(boxes, k)
    if image_size is not None:
        pts = pts / np.asarray(image_size, dtype=np.float64)
    steps = ward_linkage(pts)
    labels = cut_tree(len(pts), steps, k)
    centers = np.array([pts[labels == c].mean(axis=0) for c in range(k)])
    return _make_anchor_set(centers, "hc"), steps


def _plusplus_init(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [pts[rng.integers(len(pts))]]
    d2 = ((pts - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # every point already coincides with a center
            idx = int(rng.integers(len(pts)))
        else:
            idx = int(rng.choice(len(pts), p=d2 / total))
        centers.append(pts[idx])
        d2 = np.minimum(d2, ((pts - pts[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans_anchors(boxes: Sequence[BoxWH] | np.ndarray, k: int = DEFAULT_K, seed: int = 0,
                   init: str = "random", max_iter: int = 300) -> AnchorSet:
    """Lloyd's algorithm on ``(w, h)`` with random or K-Means++ seeding."""
    pts = _as_points(boxes, k)
    rng = np.random.default_rng(seed)
    if init == "random":
        centers = pts[rng.choice(len(pts), size=k, replace=False)].copy()
    elif init in ("plusplus", "kmeanspp", "k-means++"):
        centers = _plusplus_init(pts, k, rng)
    else:
        raise ValueError(f"unknown init {init!r} (choose 'random' or 'plusplus')")

    assign = None
    for _ in range(max_iter):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = pts[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
            else:
                # re-seed with the point worst served by its own centroid
                worst = int(np.argmax(d2[np.arange(len(pts)), assign]))
                centers[c] = pts[worst]
                assign[worst] = c
    method = "kmeans" if init == "random" else "kmeanspp"
    return _make_anchor_set(centers, method)


def estimate_anchors(boxes: Sequence[BoxWH] | np.ndarray, method: str = "hc",
                     k: int = DEFAULT_K, seed: int = 0) -> tuple[AnchorSet, list[LinkageStep]]:
    """Dispatch on ``method``; the linkage list is empty for the K-Means methods."""
    if method == "hc":
        return hc_anchors(boxes, k)
    if method == "kmeans":
        return kmeans_anchors(boxes, k, seed, "random"), []
    if method == "kmeanspp":
        return kmeans_anchors(boxes, k, seed, "plusplus"), []
    raise ValueError(f"unknown method {method!r} (choose from {', '.join(METHODS)})")


def shape_iou(dims: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """IoU of co-centered boxes, shape ``(len(dims), len(anchors))``."""
    inter = (np.minimum(dims[:, None, 0], anchors[None, :, 0])
             * np.minimum(dims[:, None, 1], anchors[None, :, 1]))
    union = (dims[:, 0] * dims[:, 1])[:, None] + (anchors[:, 0] * anchors[:, 1])[None, :] - inter
    return inter / union


def anchor_fitness(anchors: AnchorSet | Sequence[BoxWH] | np.ndarray,
                   gt_boxes: Sequence[BoxWH] | np.ndarray,
                   match_threshold: float = 0.5) -> FitnessReport:
    """Fraction of ground-truth shapes whose best anchor reaches ``match_threshold``."""
    if isinstance(anchors, AnchorSet):
        anchors = list(anchors.anchors)
    a = dims_to_array(anchors)
    g = dims_to_array(gt_boxes)
    if len(a) == 0:
        raise ValueError("anchor set is empty")
    if len(g) == 0:
        raise ValueError("recall is undefined without ground-truth boxes")
    if not (0.0 < match_threshold < 1.0):
        raise ValueError(f"match_threshold must lie in (0, 1), got {match_threshold}")
    best = shape_iou(g, a).max(axis=1)
    matched = int((best >= match_threshold).sum())
    return FitnessReport(matched / len(g), matched, len(g), match_threshold)
