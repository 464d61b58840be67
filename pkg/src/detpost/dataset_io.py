"""Reading and writing detections, ground truths, box dimensions and anchors.

Native files are header-bearing UTF-8 CSV with a fixed column order::

    image_id,class_id,x1,y1,x2,y2,score     (detections)
    image_id,class_id,x1,y1,x2,y2           (ground truth)
    w,h                                     (box dimensions / anchors)

Coordinates are absolute pixels in corner format and are written with
``repr`` so a write/read round trip is exact.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .anchors import AnchorSet, LinkageStep
from .evaluation import GroundTruth
from .geometry import Box, BoxWH
from .nms import Detection

DET_HEADER = ("image_id", "class_id", "x1", "y1", "x2", "y2", "score")
GT_HEADER = DET_HEADER[:-1]
WH_HEADER = ("w", "h")


class DetectionRecord(NamedTuple):
    image_id: str
    detection: Detection


class FormatError(ValueError):
    """Raised for malformed input; the message names the file and line."""

    def __init__(self, path: str | os.PathLike, line: int, msg: str) -> None:
        super().__init__(f"{path}:{line}: {msg}")
        self.path = str(path)
        self.line = line


def _fmt(x: float) -> str:
    return repr(float(x))


def _rows(path: str | os.PathLike, header: Sequence[str]) -> Iterable[tuple[int, list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            return
        if [c.strip() for c in first] != list(header):
            raise FormatError(path, 1, f"expected header {','.join(header)!r}, got {','.join(first)!r}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FormatError(path, reader.line_num,
                                  f"expected {len(header)} columns, got {len(row)}")
            yield reader.line_num, [c.strip() for c in row]


def _parse_box_row(path, line: int, row: list[str]) -> tuple[str, int, Box]:
    image_id = row[0]
    if not image_id:
        raise FormatError(path, line, "empty image_id")
    try:
        class_id = int(row[1])
        coords = [float(v) for v in row[2:6]]
    except ValueError as exc:
        raise FormatError(path, line, str(exc)) from None
    if class_id < 0:
        raise FormatError(path, line, f"negative class_id {class_id}")
    try:
        box = Box(*coords)
    except ValueError as exc:
        raise FormatError(path, line, str(exc)) from None
    return image_id, class_id, box


def read_detections(path: str | os.PathLike) -> list[DetectionRecord]:
    records = []
    for line, row in _rows(path, DET_HEADER):
        image_id, class_id, box = _parse_box_row(path, line, row)
        try:
            score = float(row[6])
        except ValueError as exc:
            raise FormatError(path, line, str(exc)) from None
        if not (0.0 <= score <= 1.0):
            raise FormatError(path, line, f"score {score} outside [0, 1]")
        records.append(DetectionRecord(image_id, Detection(box, class_id, score)))
    return records


def read_ground_truth(path: str | os.PathLike) -> list[GroundTruth]:
    return [GroundTruth(image_id, box, class_id)
            for image_id, class_id, box in
            (_parse_box_row(path, line, row) for line, row in _rows(path, GT_HEADER))]


def _write_atomic(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def format_detections(records: Iterable[tuple[str, Detection]]) -> str:
    return _csv_text(DET_HEADER, (
        [image_id, str(d.class_id), _fmt(d.box.x1), _fmt(d.box.y1),
         _fmt(d.box.x2), _fmt(d.box.y2), _fmt(d.score)]
        for image_id, d in records))


def format_ground_truth(gts: Iterable[GroundTruth]) -> str:
    return _csv_text(GT_HEADER, (
        [g.image_id, str(g.class_id), _fmt(g.box.x1), _fmt(g.box.y1),
         _fmt(g.box.x2), _fmt(g.box.y2)]
        for g in gts))


def write_detections(records: Iterable[tuple[str, Detection]], path: str | os.PathLike) -> None:
    _write_atomic(path, format_detections(records))


def write_ground_truth(gts: Iterable[GroundTruth], path: str | os.PathLike) -> None:
    _write_atomic(path, format_ground_truth(gts))


def read_box_dims(path: str | os.PathLike) -> list[BoxWH]:
    """Read ``w,h`` pairs, or project a ground-truth CSV onto box dimensions.

    The format is picked from the header line. Non-positive dimensions are
    rejected with the offending line number.
    """
    with open(path, encoding="utf-8") as fh:
        header = [c.strip() for c in fh.readline().strip().split(",")]
    if header == list(GT_HEADER):
        rows = ((line, row[2:6]) for line, row in _rows(path, GT_HEADER))
        project = True
    else:
        rows = _rows(path, WH_HEADER)
        project = False
    dims = []
    for line, row in rows:
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise FormatError(path, line, str(exc)) from None
        w, h = (vals[2] - vals[0], vals[3] - vals[1]) if project else vals
        if not (w > 0 and h > 0 and math.isfinite(w) and math.isfinite(h)):
            raise FormatError(path, line, f"box dimensions must be positive, got ({w}, {h})")
        dims.append(BoxWH(w, h))
    return dims


def format_box_dims(dims: Iterable[BoxWH]) -> str:
    lines = [",".join(WH_HEADER)] + [f"{_fmt(d.w)},{_fmt(d.h)}" for d in dims]
    return "\n".join(lines) + "\n"


def write_box_dims(dims: Iterable[BoxWH], path: str | os.PathLike) -> None:
    _write_atomic(path, format_box_dims(dims))


def format_anchors(anchors: AnchorSet) -> str:
    """One ``w,h`` line per anchor, smallest area first, no header."""
    return "".join(f"{_fmt(a.w)},{_fmt(a.h)}\n" for a in anchors.anchors)


def read_anchors(path: str | os.PathLike) -> list[BoxWH]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line == "w,h":
                continue
            try:
                w, h = (float(v) for v in line.split(","))
                out.append(BoxWH(w, h))
            except ValueError as exc:
                raise FormatError(path, line_no, str(exc)) from None
    return out


def format_linkage(steps: Sequence[LinkageStep]) -> str:
    lines = ["left,right,distance,size"]
    lines += [f"{s.left},{s.right},{_fmt(s.distance)},{s.size}" for s in steps]
    return "\n".join(lines) + "\n"


def group_by_image(records: Iterable[tuple[str, Detection]]) -> list[tuple[str, list[Detection]]]:
    """Group detections per image, images in order of first appearance."""
    grouped: dict[str, list[Detection]] = {}
    for image_id, d in records:
        grouped.setdefault(image_id, []).append(d)
    return list(grouped.items())


def coco_to_records(annotations_json: str | os.PathLike,
                    results_json: str | os.PathLike | None = None
                    ) -> tuple[list[GroundTruth], list[DetectionRecord]]:
    """Convert COCO-style annotation (and optional result) files.

    COCO boxes are ``[x, y, w, h]``; image ids become strings and category ids
    are kept as class ids.
    """
    with open(annotations_json, encoding="utf-8") as fh:
        ann = json.load(fh)
    gts = []
    for a in ann.get("annotations", []):
        if a.get("iscrowd", 0):
            continue
        x, y, w, h = (float(v) for v in a["bbox"])
        gts.append(GroundTruth(str(a["image_id"]), Box(x, y, x + w, y + h), int(a["category_id"])))
    dets: list[DetectionRecord] = []
    if results_json is not None:
        with open(results_json, encoding="utf-8") as fh:
            results = json.load(fh)
        for r in results:
            x, y, w, h = (float(v) for v in r["bbox"])
            dets.append(DetectionRecord(str(r["image_id"]),
                                        Detection(Box(x, y, x + w, y + h), int(r["category_id"]),
                                                  float(r["score"]))))
    return gts, dets


def load_sixray(root: str | os.PathLike) -> list[GroundTruth]:
    """Load SIXray box annotations that were exported in COCO layout.

    Expected layout (images themselves are never read)::

        <root>/
          annotations/
            instances_train.json     COCO-style boxes
            instances_test.json

    Every ``instances_*.json`` found is converted; image ids are prefixed by
    the split name to keep them unique.
    """
    ann_dir = Path(root) / "annotations"
    files = sorted(ann_dir.glob("instances_*.json"))
    if not files:
        raise FileNotFoundError(f"no instances_*.json files under {ann_dir}")
    out = []
    for f in files:
        split = f.stem.removeprefix("instances_")
        gts, _ = coco_to_records(f)
        out += [GroundTruth(f"{split}/{g.image_id}", g.box, g.class_id) for g in gts]
    return out
