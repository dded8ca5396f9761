"""Command-line entry point.

Exit codes: 0 success, 2 usage errors and missing inputs, 3 unreadable or
malformed input files. Settings resolve as flags > config file > defaults;
the config file is ``--config`` or, failing that, ``$MMLF_CONFIG``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import evaluation, kitti_io
from .errors import ConfigError, ParseError
from .fusion_net import dump_checkpoint, load_checkpoint
from .pipeline import Frame, PipelineConfig, fuse_frame, train
from .plot import render_bev_svg

EXIT_OK, EXIT_USAGE, EXIT_PARSE = 0, 2, 3

log = logging.getLogger("evfusion")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _config(args) -> PipelineConfig:
    path = args.config or os.environ.get("MMLF_CONFIG")
    cfg = PipelineConfig()
    if path:
        if not os.path.isfile(path):
            raise CliError(f"config file not found: {path}", EXIT_USAGE)
        try:
            cfg = kitti_io.load_config(kitti_io.read_text(path))
        except ConfigError as exc:
            raise CliError(f"{path}: {exc}", EXIT_PARSE) from None
    overrides = {
        "u_max": getattr(args, "u_max", None),
        "conf_threshold": getattr(args, "conf", None),
        "nms_iou": getattr(args, "nms", None),
        "epochs": getattr(args, "epochs", None),
        "seed": getattr(args, "seed", None),
    }
    try:
        return cfg.replace(**overrides)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None


def _require_dir(path, flag):
    if not os.path.isdir(path):
        raise CliError(f"{flag} directory not found: {path}", EXIT_USAGE)


def _parse_file(parser, path, *a, **kw):
    try:
        return parser(kitti_io.read_text(path), *a, source=path, **kw)
    except ParseError as exc:
        raise CliError(f"parse error: {exc}", EXIT_PARSE) from None
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_PARSE) from None


def _load_frames(args, cfg, with_labels=False):
    h = cfg.num_classes
    frames = []
    for fid in kitti_io.list_frames(args.det3d):
        calib_path = kitti_io.frame_path(args.calib, fid)
        if not os.path.isfile(calib_path):
            raise CliError(f"parse error: missing calibration file {calib_path} for frame {fid}", EXIT_PARSE)
        calib = _parse_file(kitti_io.parse_calib, calib_path)
        d3 = _parse_file(kitti_io.parse_det3d, kitti_io.frame_path(args.det3d, fid), h, cfg.classes)
        p2 = kitti_io.frame_path(args.det2d, fid)
        d2 = _parse_file(kitti_io.parse_det2d, p2, h, cfg.classes) if os.path.isfile(p2) else []
        labels = None
        if with_labels:
            lp = kitti_io.frame_path(args.labels, fid)
            if os.path.isfile(lp):
                labels = _parse_file(kitti_io.parse_gt_labels, lp)
        frames.append(Frame(fid, list(d3), list(d2), calib, labels))
    return frames


def _map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------


def run_fuse(args):
    cfg = _config(args)
    if not os.path.isfile(args.model):
        raise CliError(f"model file not found: {args.model}", EXIT_USAGE)
    for flag, d in (("--det3d", args.det3d), ("--calib", args.calib)):
        _require_dir(d, flag)
    model = _parse_file(load_checkpoint, args.model)
    if model.num_classes != cfg.num_classes:
        raise CliError(f"model has {model.num_classes} classes but config lists {cfg.num_classes}", EXIT_USAGE)
    frames = _load_frames(args, cfg)
    os.makedirs(args.out, exist_ok=True)

    def work(frame):
        dets = fuse_frame(frame.dets3d, frame.dets2d, frame.calib, model, cfg)
        text, unc = kitti_io.write_results(dets, frame.calib, cfg.classes)
        kitti_io.write_atomic(kitti_io.frame_path(args.out, frame.frame_id), text)
        kitti_io.write_atomic(kitti_io.frame_path(args.out, frame.frame_id, ".unc.txt"), unc)
        return len(dets)

    counts = _map(work, frames, args.jobs)
    for frame, n in zip(frames, counts):
        print(f"frame={frame.frame_id} detections={n}")
    print(f"frames={len(frames)} total={sum(counts)}")
    return EXIT_OK


def run_train(args):
    cfg = _config(args)
    for flag, d in (("--det3d", args.det3d), ("--calib", args.calib), ("--labels", args.labels)):
        _require_dir(d, flag)
    frames = _load_frames(args, cfg, with_labels=True)
    if not any(f.labels is not None for f in frames):
        raise CliError("empty training set: no frames with both detections and labels", EXIT_USAGE)

    def report(epoch, loss):
        print(f"epoch={epoch} loss={loss:.6f}", flush=True)

    result = train(frames, cfg, seed=cfg.seed, callback=report)
    if result.skipped:
        print(f"skipped_frames={result.skipped}", file=sys.stderr)
    kitti_io.write_atomic(args.out_model, dump_checkpoint(result.model))
    return EXIT_OK


def _load_records(directory, frames, parser):
    out = {}
    for fid in frames:
        path = kitti_io.frame_path(directory, fid)
        out[fid] = _parse_file(parser, path) if os.path.isfile(path) else []
    return out


def run_eval(args):
    _require_dir(args.gt, "--gt")
    _require_dir(args.pred, "--pred")
    classes = [c.strip() for c in args.classes.split(",") if c.strip()]
    unknown = [c for c in classes if c not in evaluation.CLASS_IOU]
    if unknown:
        raise CliError(f"unknown class(es): {', '.join(unknown)}", EXIT_USAGE)
    frames = kitti_io.list_frames(args.gt)
    gts = _load_records(args.gt, frames, kitti_io.parse_gt_labels)
    preds = _load_records(args.pred, frames, kitti_io.parse_results)
    metrics = evaluation.METRICS if args.metric == "all" else (args.metric,)
    report = {}
    for metric in metrics:
        rows = _map(lambda c, m=metric: (c, {b.name: evaluation.evaluate(preds, gts, m, c, b, args.interp)
                                             for b in evaluation.BUCKETS}), classes, args.jobs)
        table = dict(rows)
        print(evaluation.format_table(table, metric))
        print()
        report[metric] = table
    if args.out:
        kitti_io.write_atomic(args.out, json.dumps({"interp": args.interp, "frames": len(frames), "ap": report},
                                                   indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _load_fused(directory, fid):
    recs = _parse_file(kitti_io.parse_results, kitti_io.frame_path(directory, fid))
    unc_path = kitti_io.frame_path(directory, fid, ".unc.txt")
    unc = _parse_file(kitti_io.parse_uncertainty, unc_path) if os.path.isfile(unc_path) else {}
    return recs, unc


def run_stats(args):
    _require_dir(args.pred, "--pred")
    by_frame = {}
    for fid in kitti_io.list_frames(args.pred):
        recs, unc = _load_fused(args.pred, fid)
        by_frame[fid] = [(r.type, unc[k]) for k, r in enumerate(recs) if k in unc]
    means = evaluation.mean_uncertainty_per_class(by_frame)
    counts = {}
    for dets in by_frame.values():
        for name, _ in dets:
            counts[name] = counts.get(name, 0) + 1
    print(f"{'class':<12}{'mean_u':>10}{'count':>8}")
    for name in sorted(means):
        print(f"{name:<12}{means[name]:>10.5f}{counts[name]:>8d}")
    return EXIT_OK


def run_plot(args):
    _require_dir(args.pred, "--pred")
    fid = args.frame
    if fid.isdigit():
        fid = f"{int(fid):06d}"
    if not os.path.isfile(kitti_io.frame_path(args.pred, fid)):
        raise CliError(f"unknown frame {args.frame}", EXIT_USAGE)
    recs, unc = _load_fused(args.pred, fid)
    dets = [(r.box3d, r.type, unc.get(k)) for k, r in enumerate(recs)]
    gt = []
    if args.gt:
        path = kitti_io.frame_path(args.gt, fid)
        if os.path.isfile(path):
            gt = [(r.box3d, r.type) for r in _parse_file(kitti_io.parse_gt_labels, path) if not r.is_dontcare]
    kitti_io.write_atomic(args.out, render_bev_svg(dets, gt, title=f"frame {fid}"))
    return EXIT_OK


# ---------------------------------------------------------------------------


def _unit(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _non_negative_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="evfusion", description="Evidential late fusion of 3D and 2D detections.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fuse", help="fuse per-frame detections with a trained model")
    f.add_argument("--det3d", required=True)
    f.add_argument("--det2d", required=True)
    f.add_argument("--calib", required=True)
    f.add_argument("--model", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--config")
    f.add_argument("--u-max", dest="u_max", type=float)
    f.add_argument("--conf", type=_unit)
    f.add_argument("--nms", type=_unit)
    f.add_argument("--jobs", type=_positive_int, default=1)
    f.set_defaults(func=run_fuse)

    t = sub.add_parser("train", help="train evidence heads and the score network")
    t.add_argument("--det3d", required=True)
    t.add_argument("--det2d", required=True)
    t.add_argument("--calib", required=True)
    t.add_argument("--labels", required=True)
    t.add_argument("--out-model", dest="out_model", required=True)
    t.add_argument("--epochs", type=_non_negative_int, required=True)
    t.add_argument("--seed", type=_non_negative_int, required=True)
    t.add_argument("--config")
    t.set_defaults(func=run_train)

    e = sub.add_parser("eval", help="KITTI-style AP tables")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--metric", choices=(*evaluation.METRICS, "all"), required=True)
    e.add_argument("--classes", default="Car,Pedestrian,Cyclist")
    e.add_argument("--interp", type=int, choices=(11, 40), default=11)
    e.add_argument("--out", help="write the JSON report here")
    e.add_argument("--jobs", type=_positive_int, default=1)
    e.set_defaults(func=run_eval)

    s = sub.add_parser("stats", help="mean uncertainty per class")
    s.add_argument("--pred", required=True)
    s.set_defaults(func=run_stats)

    pl = sub.add_parser("plot", help="bird's-eye-view SVG of one frame")
    pl.add_argument("--pred", required=True)
    pl.add_argument("--frame", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--gt")
    pl.set_defaults(func=run_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.command == "plot" and not args.out.endswith(".svg"):
        print("error: --out must name a .svg file", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
