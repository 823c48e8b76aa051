"""Command-line entry point: ``dvis <command> --config cfg.json --set a.b=1 --out dir``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__, io, tinynet
from .config import (build_meanshift, build_net, build_scene, build_train, build_verify,
                     load_config)
from .discretize import discretize
from .grid import DimensionError
from .metrics import Prediction, evaluate, report_to_json
from .pipeline import Model, detect, fit_head
from .synthgen import SyntheticScene, generate
from .tinynet import TrainingError

log = logging.getLogger("dvis")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# -- dataset directories -------------------------------------------------------

def write_dataset(out_dir, scene_cfg, count, start=0):
    entries = []
    for i in range(start, start + count):
        s = generate(scene_cfg, i)
        stem = f"scene_{i:05d}"
        io.write_float_map(os.path.join(out_dir, stem + ".pfm"), s.image)
        io.write_gt_map(os.path.join(out_dir, stem + ".pgm"), s.gt)
        entries.append({"index": i, "image": stem + ".pfm", "gt": stem + ".pgm"})
    manifest = {"count": count, "scene_config": scene_cfg.to_dict(), "scenes": entries}
    path = os.path.join(out_dir, "dataset.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def read_dataset(path):
    """Scenes from a dataset directory (or its ``dataset.json``)."""
    if os.path.isdir(path):
        path = os.path.join(path, "dataset.json")
    root = os.path.dirname(path)
    try:
        with open(path) as fh:
            manifest = json.load(fh)
        entries = manifest["scenes"]
    except (OSError, ValueError, KeyError) as exc:
        raise io.FormatError(f"cannot read dataset manifest {path}: {exc}") from exc
    scenes = []
    for e in entries:
        image = io.read_float_map(os.path.join(root, e["image"])).astype(np.float64)
        gt = io.read_gt_map(os.path.join(root, e["gt"]))
        if image.shape[:2] != gt.shape:
            raise io.FormatError(f"image and ground truth sizes differ for {e['image']}")
        scenes.append(SyntheticScene(image=image, gt=gt, instances=[]))
    return scenes


def read_image(path):
    if path.endswith(".ppm"):
        return io.read_ppm(path).astype(np.float64) / 255.0
    img = io.read_float_map(path).astype(np.float64)
    return img


# -- checkpoints ---------------------------------------------------------------

def save_model(path, model: Model, cfg, step, opt=None):
    """Net and head weights plus optimizer buffers, with the resolved config."""
    sections = {"net": dict(model.params)}
    for k, head in enumerate(model.heads or []):
        sections[f"head.{k}"] = dict(head)
    meta = {"config": cfg, "step": step, "version": __version__}
    if opt is not None:
        sections["opt.m"] = dict(opt.buffers)
        if opt.second:
            sections["opt.v"] = dict(opt.second)
        meta["optimizer"] = {"kind": opt.kind, "lr": opt.lr, "momentum": opt.momentum,
                             "weight_decay": opt.weight_decay, "step": opt.step}
    io.save_checkpoint(path, sections, meta)


def load_model(path):
    sections, meta = io.load_checkpoint(path)
    cfg = meta.get("config")
    if cfg is None or "net" not in sections:
        raise io.FormatError(f"checkpoint {path} lacks a config or net section")
    net = build_net(cfg)
    params = tinynet.ParamSet(sections["net"])
    ref = tinynet.init(net)
    for k, v in ref.items():
        if k not in params or params[k].shape != v.shape:
            raise io.FormatError(f"checkpoint tensor {k} missing or misshaped")
    heads = []
    while f"head.{len(heads)}" in sections:
        heads.append(tinynet.ParamSet(sections[f"head.{len(heads)}"]))
    model = Model(net=net, params=params, meanshift=build_meanshift(cfg),
                  verify=build_verify(cfg), heads=heads or None)
    return model, cfg


# -- commands ------------------------------------------------------------------

def cmd_synth(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    d = cfg["data"]
    path = write_dataset(args.out, build_scene(cfg), args.count or d["train_count"],
                         d["train_start"] if args.start is None else args.start)
    return [], [path]


def cmd_train(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    if args.data:
        scenes = read_dataset(args.data)
        inputs = [args.data]
    else:
        sc = build_scene(cfg)
        d = cfg["data"]
        scenes = [generate(sc, i) for i in range(d["train_start"], d["train_start"] + d["train_count"])]
        inputs = []
    tc = build_train(cfg)
    ckpt = os.path.join(args.out, "model.ckpt")

    def progress(row):
        log.info("step %d total %.5f", row["step"], row["total"])

    res = train_model(tc, scenes, progress)
    model = Model(net=tc.net, params=res.params, meanshift=build_meanshift(cfg),
                  verify=build_verify(cfg))
    if not args.no_head:
        fit_head(model, scenes)
    save_model(ckpt, model, cfg, tc.steps, res.opt)
    trace = os.path.join(args.out, "trace.csv")
    from .trainer import write_trace_csv

    write_trace_csv(res.trace, trace)
    return inputs, [ckpt, trace]


def train_model(tc, scenes, progress=None):
    from .trainer import train

    try:
        return train(tc, scenes, progress=progress)
    except TrainingError as exc:
        raise NumericFailure(str(exc)) from exc


def _collect_images(paths):
    out = []
    for p in paths:
        if os.path.isdir(p) or p.endswith("dataset.json"):
            root = p if os.path.isdir(p) else os.path.dirname(p)
            with open(os.path.join(root, "dataset.json")) as fh:
                for e in json.load(fh)["scenes"]:
                    out.append(os.path.join(root, e["image"]))
        else:
            out.append(p)
    return out


def cmd_infer(args, cfg):
    if not args.checkpoint or not args.input:
        raise UsageError("infer needs --checkpoint and --input")
    os.makedirs(args.out, exist_ok=True)
    model, _ = load_model(args.checkpoint)
    # runtime thresholds come from the command's config, weights from the checkpoint
    model.meanshift = build_meanshift(cfg)
    v = build_verify(cfg)
    model.verify = replace(model.verify, alpha=v.alpha, accept_threshold=v.accept_threshold,
                           test_time_augment=v.test_time_augment, nms_iou=v.nms_iou)
    outputs = []
    images = _collect_images(args.input)
    for path in images:
        image = read_image(path)
        try:
            f, dets = detect(model, image)
        except DimensionError as exc:
            raise io.FormatError(f"{path}: {exc}") from exc
        if not np.all(np.isfinite(f)):
            raise NumericFailure(f"non-finite label map for {path}")
        stem = os.path.splitext(os.path.basename(path))[0]
        fpath = os.path.join(args.out, stem + ".f.pfm")
        dpath = os.path.join(args.out, stem + ".det.json")
        io.write_float_map(fpath, f)
        with open(dpath, "w") as fh:
            json.dump(io.detections_to_json(dets, image.shape[:2]), fh)
        outputs += [fpath, dpath]
    return [args.checkpoint, *images], outputs


def cmd_discretize(args, cfg):
    if not args.input:
        raise UsageError("discretize needs --input")
    os.makedirs(args.out, exist_ok=True)
    ms = build_meanshift(cfg)
    outputs = []
    for path in args.input:
        f = io.read_float_map(path).astype(np.float64)
        if f.ndim != 2:
            raise io.FormatError(f"{path} is not a single-channel label map")
        cands = discretize(f, ms)
        stem = os.path.splitext(os.path.basename(path))[0]
        out = os.path.join(args.out, stem + ".cand.json")
        with open(out, "w") as fh:
            json.dump({"height": f.shape[0], "width": f.shape[1], "candidates": [
                {"mean_label": c.mean_label, "bandwidth": c.bandwidth, "area": c.area,
                 "mask": io.rle_encode(c.mask)} for c in cands]}, fh)
        outputs.append(out)
    return list(args.input), outputs


def _load_predictions(path, shape):
    if path.endswith(".pgm"):
        gt = io.read_gt_map(path)
        return [Prediction(gt.mask(i), gt.classes[i], 1.0) for i in gt.instance_ids()]
    with open(path) as fh:
        dshape, dets = io.detections_from_json(json.load(fh))
    if tuple(dshape) != tuple(shape):
        raise io.FormatError(f"{path}: detections are {dshape}, ground truth is {shape}")
    return [Prediction(d["mask"], d["class"], d["score"]) for d in dets]


def cmd_eval(args, cfg):
    if not args.data or not args.pred:
        raise UsageError("eval needs --data and --pred")
    os.makedirs(args.out, exist_ok=True)
    root = args.data if os.path.isdir(args.data) else os.path.dirname(args.data)
    with open(os.path.join(root, "dataset.json")) as fh:
        entries = json.load(fh)["scenes"]
    gts, preds = [], []
    for e in entries:
        gt = io.read_gt_map(os.path.join(root, e["gt"]))
        stem = os.path.splitext(e["image"])[0]
        cands = [os.path.join(args.pred, stem + ".det.json"), os.path.join(args.pred, e["gt"])]
        found = next((c for c in cands if os.path.exists(c)), None)
        if found is None:
            raise io.FormatError(f"no prediction for {stem} in {args.pred}")
        gts.append(gt)
        preds.append(_load_predictions(found, gt.shape))
    report = evaluate(preds, gts, build_verify(cfg).num_classes)
    out = os.path.join(args.out, "report.json")
    with open(out, "w") as fh:
        fh.write(report_to_json(report))
    print(report_to_json(report))
    return [args.data, args.pred], [out]


def cmd_gradcheck(args, cfg):
    from .gradcheck import run_all

    os.makedirs(args.out, exist_ok=True)
    g = cfg["gradcheck"]
    results = run_all(g["points"], g["step"], g["tolerance"], g["net_params"], g["net_step"],
                      g["net_tolerance"], g["size"], cfg["seed"])
    rows = [{"check": r.name, "max_rel_error": r.max_rel_error, "points": r.points,
             "tolerance": r.tolerance, "passed": r.passed} for r in results]
    out = os.path.join(args.out, "gradcheck.json")
    with open(out, "w") as fh:
        json.dump(rows, fh, indent=1)
    for r in rows:
        print(f"{r['check']:14s} {r['max_rel_error']:.3e} {'PASS' if r['passed'] else 'FAIL'}")
    if not all(r["passed"] for r in rows):
        args._outputs = [out]
        raise NumericFailure("gradient check failed")
    return [], [out]


def cmd_render(args, cfg):
    if not args.input:
        raise UsageError("render needs --input")
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for path in args.input:
        stem = os.path.splitext(os.path.basename(path))[0]
        if path.endswith(".json"):
            with open(path) as fh:
                shape, dets = io.detections_from_json(json.load(fh))
            image = read_image(args.image) if args.image else None
            rgb = io.render_detections(shape, [d["mask"] for d in dets], image)
        else:
            f = io.read_float_map(path)
            if f.ndim != 2:
                raise io.FormatError(f"{path} is not a single-channel label map")
            rgb = io.render_label_map(f)
        out = os.path.join(args.out, stem + ".ppm")
        io.write_ppm(out, rgb)
        outputs.append(out)
    return list(args.input), outputs


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "discretize": cmd_discretize,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "render": cmd_render,
}


def build_parser():
    p = _Parser(prog="dvis", description="Variational instance segmentation at desk scale.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted override, value parsed as JSON when possible")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "synth":
            s.add_argument("--count", type=int)
            s.add_argument("--start", type=int)
        if name == "train":
            s.add_argument("--data", help="dataset directory (default: generate in memory)")
            s.add_argument("--no-head", action="store_true", help="skip the verification head")
        if name in ("infer", "discretize", "render"):
            s.add_argument("--input", nargs="+")
        if name == "infer":
            s.add_argument("--checkpoint")
        if name == "render":
            s.add_argument("--image", help="image to overlay detections on")
        if name == "eval":
            s.add_argument("--data")
            s.add_argument("--pred", help="directory of *.det.json (or *.pgm) predictions")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
    except (KeyError, ValueError) as exc:
        print(f"dvis: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"dvis: cannot read config: {exc}", file=sys.stderr)
        return EXIT_DATA
    code = EXIT_OK
    inputs, outputs = [], []
    try:
        inputs, outputs = COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"dvis: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TypeError, ValueError) as exc:
        if not isinstance(exc, (io.FormatError, DimensionError)):
            print(f"dvis: invalid configuration: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"dvis: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, KeyError) as exc:
        print(f"dvis: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericFailure as exc:
        print(f"dvis: numeric failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
        outputs = getattr(args, "_outputs", [])
    io.write_manifest(args.out, args.command, cfg, inputs, outputs, cfg["seed"], __version__)
    return code


if __name__ == "__main__":
    sys.exit(main())
