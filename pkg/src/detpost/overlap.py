"""Overlap criteria between boxes: IoU, D-IoU, C-IoU and E-IoU.

Every penalized criterion is ``IoU - penalty``. Distances inside the penalties
are squared so each term is a ratio of squared lengths, which keeps all kinds
translation and scale invariant.
"""

from __future__ import annotations

import enum
import math
from typing import Sequence

import numba
import numpy as np

from .geometry import Box, boxes_to_array, center, enclosing_box, iou


class OverlapKind(str, enum.Enum):
    IOU = "iou"
    DIOU = "diou"
    CIOU = "ciou"
    EIOU = "eiou"

    @classmethod
    def parse(cls, value: str | OverlapKind) -> OverlapKind:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", ""))
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown overlap kind {value!r} (choose from {choices})") from None


def _ratio(num: float, den: float) -> float:
    # a zero denominator forces a zero numerator for every term used here
    return num / den if den > 0 else 0.0


def eiou_terms(a: Box, b: Box) -> tuple[float, float, float]:
    """Return the center, width and height terms of the E-IoU penalty."""
    enc = enclosing_box(a, b)
    wc, hc = enc.width, enc.height
    (ax, ay), (bx, by) = center(a), center(b)
    rho2 = (ax - bx) ** 2 + (ay - by) ** 2
    dist_term = _ratio(rho2, wc * wc + hc * hc)
    w_term = _ratio((a.width - b.width) ** 2, wc * wc)
    h_term = _ratio((a.height - b.height) ** 2, hc * hc)
    return dist_term, w_term, h_term


def eiou_penalty(a: Box, b: Box) -> float:
    return sum(eiou_terms(a, b))


def diou_penalty(a: Box, b: Box) -> float:
    return eiou_terms(a, b)[0]


def ciou_penalty(a: Box, b: Box) -> float:
    """Center-distance term plus the alpha-weighted aspect-ratio term."""
    v = (4.0 / math.pi**2) * (
        math.atan2(a.width, a.height) - math.atan2(b.width, b.height)
    ) ** 2
    alpha = _ratio(v, (1.0 - iou(a, b)) + v)
    return eiou_terms(a, b)[0] + alpha * v


_PENALTIES = {
    OverlapKind.DIOU: diou_penalty,
    OverlapKind.CIOU: ciou_penalty,
    OverlapKind.EIOU: eiou_penalty,
}


def pairwise_overlap(a: Box, b: Box, kind: OverlapKind | str = OverlapKind.IOU) -> float:
    kind = OverlapKind.parse(kind)
    value = iou(a, b)
    if kind is OverlapKind.IOU:
        return value
    return value - _PENALTIES[kind](a, b)


_KIND_CODES = {OverlapKind.IOU: 0, OverlapKind.DIOU: 1, OverlapKind.CIOU: 2, OverlapKind.EIOU: 3}
_FOUR_OVER_PI2 = 4.0 / math.pi**2


@numba.njit(cache=True)
def _pair_value(b, angles, i, j, code, penalty_only):
    ax1, ay1, ax2, ay2 = b[i, 0], b[i, 1], b[i, 2], b[i, 3]
    bx1, by1, bx2, by2 = b[j, 0], b[j, 1], b[j, 2], b[j, 3]
    aw = ax2 - ax1
    ah = ay2 - ay1
    bw = bx2 - bx1
    bh = by2 - by1
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = iw * ih if iw > 0.0 and ih > 0.0 else 0.0
    union = aw * ah + bw * bh - inter
    m = inter / union if union > 0.0 else 0.0
    if code == 0:
        return 0.0 if penalty_only else m
    wc = max(ax2, bx2) - min(ax1, bx1)
    hc = max(ay2, by2) - min(ay1, by1)
    wc2 = wc * wc
    hc2 = hc * hc
    dx = (ax1 + ax2) / 2.0 - (bx1 + bx2) / 2.0
    dy = (ay1 + ay2) / 2.0 - (by1 + by2) / 2.0
    diag2 = wc2 + hc2
    penalty = (dx * dx + dy * dy) / diag2 if diag2 > 0.0 else 0.0
    if code == 3:
        if wc2 > 0.0:
            penalty += (aw - bw) ** 2 / wc2
        if hc2 > 0.0:
            penalty += (ah - bh) ** 2 / hc2
    elif code == 2:
        v = _FOUR_OVER_PI2 * (angles[i] - angles[j]) ** 2
        den = (1.0 - m) + v
        if den > 0.0:
            penalty += v * v / den
    return penalty if penalty_only else m - penalty


@numba.njit(cache=True)
def _triu_kernel(b, angles, code, penalty_only):
    n = b.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = _pair_value(b, angles, i, j, code, penalty_only)
    return out


def overlap_matrix(boxes: Sequence[Box] | np.ndarray, kind: OverlapKind | str = OverlapKind.IOU) -> np.ndarray:
    """Strictly upper-triangular matrix of pairwise criterion values.

    Callers are expected to pass boxes sorted by descending score; entry
    ``(i, j)`` for ``i < j`` holds the criterion between boxes ``i`` and ``j``.
    Diagonal and lower triangle are zero.
    """
    return _matrix(boxes, kind, penalty_only=False)


def penalty_matrix(boxes: Sequence[Box] | np.ndarray, kind: OverlapKind | str = OverlapKind.EIOU) -> np.ndarray:
    """Upper-triangular penalty terms alone, so ``overlap = IoU - penalty``."""
    return _matrix(boxes, kind, penalty_only=True)


def _matrix(boxes, kind, penalty_only: bool) -> np.ndarray:
    b = np.ascontiguousarray(boxes_to_array(boxes))
    if len(b) == 0:
        raise ValueError("overlap_matrix needs at least one box")
    # aspect angles feed only the C-IoU term
    angles = np.arctan2(b[:, 2] - b[:, 0], b[:, 3] - b[:, 1])
    return _triu_kernel(b, angles, _KIND_CODES[OverlapKind.parse(kind)], penalty_only)
