"""Seeded synthetic scenes of occluding boxes with a noisy mock detector.

Ground-truth boxes are placed either disjoint from everything already in the
image or, with probability ``overlap_level``, partly covering a previously
placed box. Each ground truth yields ``dets_per_gt`` jittered detections whose
scores fall as the jitter grows; spurious low-score boxes can be mixed in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset_io import DetectionRecord
from .evaluation import GroundTruth
from .geometry import Box
from .nms import Detection


class InfeasibleSceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    n_images: int = 10
    boxes_per_image: tuple[int, int] = (2, 8)
    overlap_level: float = 0.0
    class_count: int = 1
    image_size: tuple[float, float] = (640.0, 480.0)
    box_size: tuple[float, float] = (24.0, 96.0)  # side length range, pixels
    center_sigma: float = 0.0
    size_sigma: float = 0.0
    dets_per_gt: int = 1
    spurious_per_image: int = 0
    score_base: float = 0.95
    score_slope: float = 1.0  # score drop per unit of jitter relative to box size
    score_noise: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.boxes_per_image
        if self.n_images <= 0 or lo <= 0 or hi < lo:
            raise ValueError("image and box counts must be positive with min <= max")
        if not (0.0 <= self.overlap_level <= 1.0):
            raise ValueError("overlap_level must lie in [0, 1]")
        if self.class_count <= 0 or self.dets_per_gt <= 0 or self.spurious_per_image < 0:
            raise ValueError("class_count and dets_per_gt must be positive")
        if min(self.center_sigma, self.size_sigma, self.score_noise) < 0:
            raise ValueError("noise levels must be non-negative")
        if not (0 < self.box_size[0] <= self.box_size[1]):
            raise ValueError("box_size must be a positive (min, max) range")


_MAX_TRIES = 1000


def _disjoint(box: np.ndarray, placed: list[np.ndarray]) -> bool:
    for p in placed:
        if min(box[2], p[2]) > max(box[0], p[0]) and min(box[3], p[3]) > max(box[1], p[1]):
            return False
    return True


def _place_image(spec: SceneSpec, rng: np.random.Generator) -> list[np.ndarray]:
    img_w, img_h = spec.image_size
    s_lo, s_hi = spec.box_size
    if s_hi > min(img_w, img_h):
        raise InfeasibleSceneError(f"boxes up to {s_hi}px cannot fit a {img_w}x{img_h} image")
    n = int(rng.integers(spec.boxes_per_image[0], spec.boxes_per_image[1] + 1))
    placed: list[np.ndarray] = []
    for _ in range(n):
        w, h = rng.uniform(s_lo, s_hi, size=2)
        if placed and rng.random() < spec.overlap_level:
            host = placed[int(rng.integers(len(placed)))]
            hw, hh = host[2] - host[0], host[3] - host[1]
            # shift by 20-60% of the host extent so the two boxes partly overlap
            dx = rng.uniform(0.2, 0.6) * hw * rng.choice([-1.0, 1.0])
            dy = rng.uniform(0.2, 0.6) * hh * rng.choice([-1.0, 1.0])
            cx = np.clip((host[0] + host[2]) / 2 + dx, w / 2, img_w - w / 2)
            cy = np.clip((host[1] + host[3]) / 2 + dy, h / 2, img_h - h / 2)
            placed.append(np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2]))
            continue
        for _ in range(_MAX_TRIES):
            x1 = rng.uniform(0, img_w - w)
            y1 = rng.uniform(0, img_h - h)
            box = np.array([x1, y1, x1 + w, y1 + h])
            if _disjoint(box, placed):
                placed.append(box)
                break
        else:
            raise InfeasibleSceneError(
                f"could not place {n} disjoint boxes in a {img_w}x{img_h} image")
    return placed


def _jitter(gt: np.ndarray, spec: SceneSpec, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    img_w, img_h = spec.image_size
    w, h = gt[2] - gt[0], gt[3] - gt[1]
    dc = rng.normal(0.0, spec.center_sigma, size=2) if spec.center_sigma > 0 else np.zeros(2)
    ds = rng.normal(0.0, spec.size_sigma, size=2) if spec.size_sigma > 0 else np.zeros(2)
    nw, nh = max(w + ds[0], 1.0), max(h + ds[1], 1.0)
    cx = (gt[0] + gt[2]) / 2 + dc[0]
    cy = (gt[1] + gt[3]) / 2 + dc[1]
    box = np.array([max(cx - nw / 2, 0.0), max(cy - nh / 2, 0.0),
                    min(cx + nw / 2, img_w), min(cy + nh / 2, img_h)])
    if box[2] <= box[0] or box[3] <= box[1] or not (dc.any() or ds.any()):
        box = gt.copy()
    error = float(np.hypot(*dc) + np.hypot(*ds)) / float(np.sqrt(w * h))
    noise = rng.normal(0.0, spec.score_noise) if spec.score_noise > 0 else 0.0
    score = float(np.clip(spec.score_base - spec.score_slope * error + noise, 0.01, 1.0))
    return box, score


def generate_scenes(spec: SceneSpec) -> tuple[list[GroundTruth], list[DetectionRecord]]:
    """Ground truths and mock detections for ``spec``; identical specs give identical output."""
    rng = np.random.default_rng(spec.seed)
    img_w, img_h = spec.image_size
    gts: list[GroundTruth] = []
    dets: list[DetectionRecord] = []
    for i in range(spec.n_images):
        image_id = f"img{i:05d}"
        boxes = _place_image(spec, rng)
        classes = rng.integers(0, spec.class_count, size=len(boxes))
        for box, c in zip(boxes, classes):
            gts.append(GroundTruth(image_id, Box(*box.tolist()), int(c)))
            for _ in range(spec.dets_per_gt):
                jb, score = _jitter(box, spec, rng)
                dets.append(DetectionRecord(image_id, Detection(Box(*jb.tolist()), int(c), score)))
        for _ in range(spec.spurious_per_image):
            w, h = rng.uniform(*spec.box_size, size=2)
            x1 = rng.uniform(0, img_w - w)
            y1 = rng.uniform(0, img_h - h)
            c = int(rng.integers(0, spec.class_count))
            score = float(rng.uniform(0.01, 0.3))
            dets.append(DetectionRecord(image_id, Detection(Box(x1, y1, x1 + w, y1 + h), c, score)))
    return gts, dets
