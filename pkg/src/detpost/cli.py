"""Command-line front end: ``detpost {generate,nms,anchors,fitness,eval,bench}``."""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
import warnings
from pathlib import Path
from typing import Sequence

from . import __version__
from .anchors import DEFAULT_K, METHODS, anchor_fitness, estimate_anchors, hc_anchors
from .dataset_io import (
    FormatError,
    format_anchors,
    format_box_dims,
    format_detections,
    format_ground_truth,
    format_linkage,
    group_by_image,
    read_anchors,
    read_box_dims,
    read_detections,
    read_ground_truth,
)
from .evaluation import evaluate, parse_thresholds, pr_curve_csv
from .geometry import BoxWH
from .nms import VARIANTS, NmsConfig, batched_nms
from .overlap import OverlapKind
from .scenes import SceneSpec, generate_scenes

KINDS = [k.value for k in OverlapKind]


class CliError(Exception):
    pass


def _write_outputs(outputs: Sequence[tuple[Path, str]]) -> None:
    """Write every output or none: already-written files are removed on failure."""
    written: list[Path] = []
    try:
        for path, text in outputs:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            written.append(path)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


# -- generate ---------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    spec = SceneSpec(
        n_images=args.n_images,
        boxes_per_image=tuple(args.boxes_per_image),
        overlap_level=args.overlap_level,
        class_count=args.classes,
        image_size=tuple(args.image_size),
        box_size=tuple(args.box_size),
        center_sigma=args.center_sigma,
        size_sigma=args.size_sigma,
        dets_per_gt=args.dets_per_gt,
        spurious_per_image=args.spurious,
        score_noise=args.score_noise,
        seed=args.seed,
    )
    gts, dets = generate_scenes(spec)
    out = Path(args.output)
    dims = [BoxWH(g.box.width, g.box.height) for g in gts]
    _write_outputs([
        (out / "gt.csv", format_ground_truth(gts)),
        (out / "detections.csv", format_detections(dets)),
        (out / "wh.csv", format_box_dims(dims)),
    ])
    print(f"wrote {len(gts)} ground truths and {len(dets)} detections "
          f"over {spec.n_images} images to {out}")
    return 0


# -- nms ----------------------------------------------------------------------

def _nms_config(args: argparse.Namespace) -> NmsConfig:
    return NmsConfig(kind=args.kind, threshold_eps=args.eps, max_iters=args.max_iters,
                     class_agnostic=args.class_agnostic, score_floor=args.score_floor)


def cmd_nms(args: argparse.Namespace) -> int:
    if args.variant == "greedy" and args.kind != "iou":
        print(f"warning: --kind {args.kind} is ignored by the greedy variant (plain IoU)",
              file=sys.stderr)
    records = read_detections(args.detections)
    per_image = group_by_image(records)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        results = batched_nms(per_image, _nms_config(args), args.variant, jobs=args.jobs)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    kept = []
    for (image_id, dets), (_, res) in zip(per_image, results):
        kept += [(image_id, d) for d in res.kept]
        print(f"{image_id}: kept {len(res.kept)}, suppressed {len(dets) - len(res.kept)}")
    _write_outputs([(Path(args.output), format_detections(kept))])
    print(f"{len(kept)} of {len(records)} detections kept -> {args.output}")
    return 0


# -- anchors / fitness -------------------------------------------------------

def cmd_anchors(args: argparse.Namespace) -> int:
    dims = read_box_dims(args.boxes)
    if not dims:
        raise CliError(f"{args.boxes} holds no boxes")
    if args.k > len(dims):
        raise CliError(f"--k {args.k} exceeds the number of boxes ({len(dims)})")
    if args.method == "hc" and args.image_size:
        anchors, steps = hc_anchors(dims, args.k, image_size=tuple(args.image_size))
    else:
        anchors, steps = estimate_anchors(dims, args.method, args.k, args.seed)
    out = Path(args.output)
    outputs = [(out, format_anchors(anchors))]
    if args.method == "hc":
        linkage_path = Path(args.linkage) if args.linkage else _sibling(out, ".linkage.csv")
        outputs.append((linkage_path, format_linkage(steps)))
    if args.image_size:
        w, h = args.image_size
        gt_dims = [BoxWH(d.w / w, d.h / h) for d in dims]
    else:
        gt_dims = dims
    report = anchor_fitness(anchors, gt_dims, args.match_threshold)
    _write_outputs(outputs)
    for a in anchors.anchors:
        print(f"{a.w:.2f},{a.h:.2f}")
    print(f"achievable recall {report.achievable_recall:.4f} "
          f"({report.matched}/{report.total} at shape IoU >= {report.match_threshold})")
    return 0


def cmd_fitness(args: argparse.Namespace) -> int:
    anchors = read_anchors(args.anchors)
    dims = read_box_dims(args.boxes)
    report = anchor_fitness(anchors, dims, args.match_threshold)
    print(f"achievable recall {report.achievable_recall:.4f} "
          f"({report.matched}/{report.total} at shape IoU >= {report.match_threshold})")
    if args.output:
        payload = {"achievable_recall": report.achievable_recall, "matched": report.matched,
                   "total": report.total, "match_threshold": report.match_threshold}
        _write_outputs([(Path(args.output), json.dumps(payload, indent=2, sort_keys=True) + "\n")])
    return 0


# -- eval ---------------------------------------------------------------------

def cmd_eval(args: argparse.Namespace) -> int:
    thresholds = parse_thresholds(args.iou_thresholds)
    dets = read_detections(args.detections)
    gts = read_ground_truth(args.ground_truth)
    if not gts:
        raise CliError(f"{args.ground_truth} holds no ground truths")
    report = evaluate(dets, gts, thresholds)
    table = report.format_table()
    out = Path(args.output)
    primary = 0.5 if 0.5 in thresholds else thresholds[0]
    outputs = [(out, report.to_json()), (_sibling(out, ".txt"), table)]
    for c in sorted(report.per_class):
        outputs.append((_sibling(out, f"_pr_class{c}.csv"), pr_curve_csv(report.curves[(c, primary)])))
    _write_outputs(outputs)
    print(table, end="")
    return 0


# -- bench --------------------------------------------------------------------

_SCENE_KEYS = {
    "n_images": int, "overlap_level": float, "class_count": int, "center_sigma": float,
    "size_sigma": float, "dets_per_gt": int, "spurious_per_image": int, "score_noise": float,
    "score_base": float, "score_slope": float,
}


def read_bench_config(path: str | os.PathLike) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    cfg: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(path, n, f"expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            cfg[key] = value
    return cfg


def _parse_variants(text: str) -> list[tuple[str, str]]:
    variants = []
    for item in (v.strip() for v in text.split(",")):
        if not item:
            continue
        name, _, kind = item.partition(":")
        kind = kind or "iou"
        if name not in VARIANTS:
            raise CliError(f"unknown variant {name!r} in bench config")
        if kind not in KINDS:
            raise CliError(f"unknown kind {kind!r} in bench config")
        variants.append((name, kind))
    if not variants:
        raise CliError("bench config lists no variants")
    return variants


def _bench_data(cfg: dict[str, str], base: Path):
    if "detections" in cfg or "ground_truth" in cfg:
        if not ("detections" in cfg and "ground_truth" in cfg):
            raise CliError("bench config needs both 'detections' and 'ground_truth'")
        return (read_ground_truth(base / cfg["ground_truth"]),
                read_detections(base / cfg["detections"]))
    scene = {k[len("scene."):]: v for k, v in cfg.items() if k.startswith("scene.")}
    kwargs = {}
    for key, value in scene.items():
        if key not in _SCENE_KEYS:
            raise CliError(f"unknown scene key {key!r} in bench config")
        kwargs[key] = _SCENE_KEYS[key](value)
    return generate_scenes(SceneSpec(seed=int(cfg.get("seed", 0)), **kwargs))


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = read_bench_config(args.config)
    base = Path(args.config).resolve().parent
    variants = _parse_variants(cfg.get("variants", "greedy"))
    eps_list = [float(e) for e in cfg.get("eps", "0.5").split(",") if e.strip()]
    thresholds = parse_thresholds(cfg.get("iou_thresholds", "coco"))
    class_agnostic = cfg.get("class_agnostic", "false").lower() in ("1", "true", "yes")
    repeats = int(cfg.get("repeats", 5))
    gts, dets = _bench_data(cfg, base)
    per_image = group_by_image(dets)
    n_boxes = max(len(dets), 1)

    rows = []
    for name, kind in variants:
        for eps in eps_list:
            nms_cfg = NmsConfig(kind=kind, threshold_eps=eps, class_agnostic=class_agnostic)
            try:
                # untimed warm-up so JIT compilation stays out of the median
                batched_nms(per_image, nms_cfg, name, jobs=args.jobs)
                timings = []
                for _ in range(repeats):
                    start = time.perf_counter()
                    results = batched_nms(per_image, nms_cfg, name, jobs=args.jobs)
                    timings.append(time.perf_counter() - start)
                kept = [(image_id, d) for image_id, res in results for d in res.kept]
                report = evaluate(kept, gts, thresholds)
            except Exception as exc:
                raise CliError(f"variant {name}:{kind} at eps={eps} failed: {exc}") from exc
            ms_per_1k = 1000.0 * statistics.median(timings) * 1000.0 / n_boxes
            rows.append((name, kind, eps, report.map50, report.map50_95, ms_per_1k))

    header = f"{'variant':<10} {'kind':<5} {'eps':>5} {'mAP@0.5':>8} {'mAP@0.5:0.95':>13}"
    lines = [header] + [f"{n:<10} {k:<5} {e:>5.2f} {m50:>8.4f} {m5095:>13.4f}"
                        for n, k, e, m50, m5095, _ in rows]
    table = "\n".join(lines) + "\n"
    print(header + f" {'ms/1k boxes':>12}")
    for line, row in zip(lines[1:], rows):
        print(line + f" {row[5]:>12.2f}")

    outputs = []
    output = args.output or cfg.get("output")
    if output:
        outputs.append((base / output if not args.output else Path(output), table))
    if "timing" in cfg:
        timing = "variant,kind,eps,ms_per_1000_boxes\n" + "".join(
            f"{n},{k},{e!r},{t!r}\n" for n, k, e, _, _, t in rows)
        outputs.append((base / cfg["timing"], timing))
    _write_outputs(outputs)
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="detpost", description=__doc__, formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic scene set", formatter_class=fmt)
    p.add_argument("--output", required=True, help="directory for gt.csv, detections.csv, wh.csv")
    p.add_argument("--n-images", type=int, default=10, help="number of images")
    p.add_argument("--boxes-per-image", type=int, nargs=2, default=[2, 8], metavar=("MIN", "MAX"),
                   help="ground-truth boxes per image")
    p.add_argument("--overlap-level", type=float, default=0.0,
                   help="probability that a box is placed overlapping an earlier one")
    p.add_argument("--classes", type=int, default=1, help="number of classes")
    p.add_argument("--image-size", type=float, nargs=2, default=[640.0, 480.0], metavar=("W", "H"),
                   help="image size in pixels")
    p.add_argument("--box-size", type=float, nargs=2, default=[24.0, 96.0], metavar=("MIN", "MAX"),
                   help="box side length range in pixels")
    p.add_argument("--center-sigma", type=float, default=0.0, help="detection center jitter (pixels)")
    p.add_argument("--size-sigma", type=float, default=0.0, help="detection size jitter (pixels)")
    p.add_argument("--dets-per-gt", type=int, default=1, help="jittered detections per ground truth")
    p.add_argument("--spurious", type=int, default=0, help="spurious false positives per image")
    p.add_argument("--score-noise", type=float, default=0.0, help="score noise sigma")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("nms", help="suppress duplicate detections", formatter_class=fmt)
    p.add_argument("detections", help="detection CSV")
    p.add_argument("--variant", choices=VARIANTS, default="wcluster", help="NMS algorithm")
    p.add_argument("--kind", choices=KINDS, default="eiou",
                   help="overlap criterion (cluster variants only)")
    p.add_argument("--eps", type=float, default=0.5, help="suppression threshold")
    p.add_argument("--max-iters", type=int, default=None,
                   help="cluster iteration cap (default: number of boxes)")
    p.add_argument("--score-floor", type=float, default=0.001,
                   help="drop detections scoring below this before NMS")
    p.add_argument("--class-agnostic", action="store_true", help="suppress across classes")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--output", required=True, help="filtered detection CSV")
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("anchors", help="estimate anchor boxes", formatter_class=fmt)
    p.add_argument("boxes", help="w,h CSV or ground-truth CSV")
    p.add_argument("--method", choices=METHODS, default="hc", help="clustering method")
    p.add_argument("--k", type=int, default=DEFAULT_K, help="number of anchors")
    p.add_argument("--seed", type=int, default=0, help="seed for the K-Means methods")
    p.add_argument("--image-size", type=float, nargs=2, default=None, metavar=("W", "H"),
                   help="normalize dimensions by this image size before hc clustering")
    p.add_argument("--match-threshold", type=float, default=0.5,
                   help="shape IoU needed for a box to count as matched")
    p.add_argument("--linkage", default=None,
                   help="linkage CSV path for hc (default: <output stem>.linkage.csv)")
    p.add_argument("--output", required=True, help="anchor file, one w,h per line")
    p.set_defaults(func=cmd_anchors)

    p = sub.add_parser("fitness", help="achievable recall of an anchor file", formatter_class=fmt)
    p.add_argument("anchors", help="anchor file")
    p.add_argument("boxes", help="w,h CSV or ground-truth CSV")
    p.add_argument("--match-threshold", type=float, default=0.5,
                   help="shape IoU needed for a box to count as matched")
    p.add_argument("--output", default=None, help="optional JSON report")
    p.set_defaults(func=cmd_fitness)

    p = sub.add_parser("eval", help="precision, recall and mAP", formatter_class=fmt)
    p.add_argument("detections", help="detection CSV")
    p.add_argument("ground_truth", help="ground-truth CSV")
    p.add_argument("--iou-thresholds", default="coco",
                   help='"coco" for 0.50:0.05:0.95 or a comma-separated list')
    p.add_argument("--output", required=True,
                   help="JSON report; a .txt table and per-class PR CSVs are written beside it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="run an NMS ablation grid", formatter_class=fmt)
    p.add_argument("config", help="key = value grid config")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--output", default=None,
                   help="report table path (overrides the config's 'output')")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, FormatError, ValueError, OSError) as exc:
        print(f"detpost {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
