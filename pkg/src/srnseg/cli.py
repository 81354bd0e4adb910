"""Command-line entry point: ``python -m srnseg <command> [--flags]``.

Every command accepts ``--config FILE`` pointing at a JSON object whose keys are
the command's long flag names (dashes or underscores).  Flags given on the
command line override the file; unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import formats
from .camera import CameraView, Intrinsics, Pose, orbit_poses
from .data import (
    DatasetError,
    LabeledObservation,
    generate_dataset,
    read_dataset,
    read_label_list,
    select_labeled_views,
    write_dataset,
    write_label_list,
)
from .evaluation import MetricReport, consistency_from_labels, miou, psnr, shape_miou
from .model import CheckpointError, ModelConfig, SceneModel
from .renderer import point_cloud
from .scene import interpolate_codes
from .training import LossWeights, TrainConfig, fit_seg_head, infer_latent, pretrain

log = logging.getLogger("srnseg.cli")


class UsageError(Exception):
    pass


# option name -> (type, default, help); _REQUIRED marks mandatory options
_REQUIRED = object()

COMMANDS = {
    "gen-data": {
        "template": (str, "chair", "object template: chair or table"),
        "instances": (int, 12, "number of object instances"),
        "views": (int, 16, "training views per instance"),
        "test-views": (int, 0, "extra held-out views per instance"),
        "resolution": (int, 32, "image width and height"),
        "seed": (int, 0, "generator seed"),
        "out": (str, _REQUIRED, "output directory"),
    },
    "pretrain": {
        "data": (str, _REQUIRED, "dataset directory"),
        "out": (str, _REQUIRED, "output checkpoint (.npz)"),
        "steps": (int, 2000, "optimizer steps"),
        "batch-rays": (int, 1024, "rays per step"),
        "lr": (float, 1e-3, "Adam learning rate"),
        "seed": (int, 0, "initialization and sampling seed"),
        "latent": (int, 32, "latent code size"),
        "hidden": (int, 32, "scene MLP and hypernetwork width"),
        "features": (int, 32, "feature size"),
        "march-steps": (int, 10, "ray marching steps"),
        "w-rgb": (float, 1.0, "rgb loss weight"),
        "w-latent": (float, 1e-3, "latent prior weight"),
        "log-every": (int, 100, "log interval in steps"),
    },
    "fit-head": {
        "checkpoint": (str, _REQUIRED, "pretrained checkpoint"),
        "data": (str, _REQUIRED, "dataset directory"),
        "labels": (str, None, "file of 'instance_id view_index' lines; generated when omitted"),
        "num-labeled": (int, 30, "size of the generated label list"),
        "per-instance": (int, 3, "max views per instance in the generated list"),
        "steps": (int, 2000, "optimizer steps"),
        "lr": (float, 1e-2, "Adam learning rate"),
        "seed": (int, 0, "label sampling seed"),
        "out": (str, _REQUIRED, "output checkpoint"),
    },
    "infer": {
        "checkpoint": (str, _REQUIRED, "checkpoint"),
        "view": (list, _REQUIRED, "observation prefix; PREFIX.pose plus PREFIX.ppm and/or PREFIX.pgm (repeatable)"),
        "rgb": (bool, False, "use the rgb images"),
        "mask": (bool, False, "use the segmentation masks"),
        "iters": (int, 300, "optimizer iterations"),
        "lr": (float, 1e-2, "Adam learning rate"),
        "seed": (int, 0, "code initialization seed"),
        "out": (str, _REQUIRED, "output code file"),
    },
    "render": {
        "checkpoint": (str, _REQUIRED, "checkpoint"),
        "code": (str, _REQUIRED, "instance id stored in the checkpoint or a code file"),
        "pose": (str, _REQUIRED, "camera-to-world pose file"),
        "resolution": (int, 32, "image width and height"),
        "out": (str, _REQUIRED, "output prefix; writes PREFIX.ppm and PREFIX.pgm"),
    },
    "interpolate": {
        "checkpoint": (str, _REQUIRED, "checkpoint"),
        "code-a": (str, _REQUIRED, "first code (instance id or file)"),
        "code-b": (str, _REQUIRED, "second code (instance id or file)"),
        "steps": (int, 8, "number of frames, endpoints included"),
        "resolution": (int, 32, "image width and height"),
        "elevation": (float, 25.0, "orbit elevation in degrees"),
        "out": (str, _REQUIRED, "output directory"),
    },
    "pointcloud": {
        "checkpoint": (str, _REQUIRED, "checkpoint"),
        "code": (str, _REQUIRED, "instance id or code file"),
        "views": (int, 8, "orbit views to sample"),
        "resolution": (int, 32, "image width and height"),
        "out": (str, _REQUIRED, "output .ply"),
    },
    "eval": {
        "checkpoint": (str, _REQUIRED, "checkpoint"),
        "data": (str, _REQUIRED, "dataset directory"),
        "split": (str, "test", "which views to score: train, test or all"),
        "gt-predictions": (bool, False, "score ground-truth masks as predictions (sanity check)"),
        "pairs": (int, 50, "view pairs for the consistency rate"),
        "seed": (int, 0, "pair sampling seed"),
        "report": (str, _REQUIRED, "output report (.json or .txt)"),
    },
    "export-features": {
        "checkpoint": (str, _REQUIRED, "checkpoint"),
        "code": (str, _REQUIRED, "instance id or code file"),
        "pose": (str, _REQUIRED, "pose file"),
        "mask": (str, None, "ground-truth mask (.pgm); labels are -1 when omitted"),
        "resolution": (int, 32, "image width and height"),
        "out": (str, _REQUIRED, "output text file"),
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srnseg", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file of option values")
        for opt, (typ, _default, help_) in opts.items():
            flag = "--" + opt
            if typ is bool:
                p.add_argument(flag, action="store_const", const=True, default=None, help=help_)
            elif typ is list:
                p.add_argument(flag, action="append", default=None, help=help_)
            else:
                p.add_argument(flag, type=typ, default=None, help=help_)
    return parser


def resolve(command: str, ns: argparse.Namespace) -> dict:
    """Merge defaults, the optional config file and explicit flags, in that order."""
    spec = COMMANDS[command]
    values = {}
    if ns.config:
        try:
            with open(ns.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError(f"config {ns.config} must hold a JSON object")
        for key, val in raw.items():
            opt = key.replace("_", "-")
            if opt not in spec:
                raise UsageError(f"unknown config key {key!r} for {command}")
            typ = spec[opt][0]
            if typ is list:
                val = list(val) if isinstance(val, list) else [val]
            elif typ is float and isinstance(val, int):
                val = float(val)
            elif not isinstance(val, typ) or (typ is int and isinstance(val, bool)):
                raise UsageError(f"config key {key!r} must be {typ.__name__}")
            values[opt] = val
    for opt in spec:
        flag_val = getattr(ns, opt.replace("-", "_"))
        if flag_val is not None:
            values[opt] = flag_val
    for opt, (_typ, default, _help) in spec.items():
        if opt not in values:
            if default is _REQUIRED:
                raise UsageError(f"{command}: --{opt} is required")
            values[opt] = default
    return {k.replace("-", "_"): v for k, v in values.items()}


# ------------------------------------------------------------------ helpers


def _load_model(path) -> SceneModel:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return SceneModel.load(path)


def _load_code(model: SceneModel, key: str):
    if key in model.codes:
        return model.codes[key]
    if os.path.isfile(key):
        arr = np.loadtxt(key, ndmin=1)
        if arr.size != model.config.latent:
            raise UsageError(f"code file {key} has {arr.size} values, expected {model.config.latent}")
        return arr.reshape(1, -1)
    raise UsageError(f"{key!r} is neither an instance id in the checkpoint nor a code file")


def _code_array(code) -> np.ndarray:
    return np.asarray(getattr(code, "data", code))


def _read_pose(path) -> Pose:
    with open(path) as fh:
        return Pose.from_text(fh.read())


def _view(pose: Pose, resolution: int) -> CameraView:
    return CameraView(Intrinsics.for_resolution(resolution), pose, resolution, resolution)


def _write_code(path, code: np.ndarray) -> None:
    with formats.atomic_open(path, "w") as fh:
        fh.write(" ".join(repr(float(x)) for x in np.ravel(code)) + "\n")


# ------------------------------------------------------------------ commands


def cmd_gen_data(a: dict) -> None:
    if a["instances"] < 1:
        raise UsageError("--instances must be >= 1")
    if a["views"] < 1 or a["resolution"] < 1 or a["test_views"] < 0:
        raise UsageError("--views and --resolution must be >= 1")
    ds = generate_dataset(a["template"], a["instances"], a["views"], a["test_views"], a["resolution"], a["seed"])
    manifest = write_dataset(ds, a["out"])
    n_train = sum(v["split"] == "train" for e in manifest["instances"] for v in e["views"])
    log.info("event=gen_data instances=%d train_views=%d out=%s", len(ds), n_train, a["out"])


def cmd_pretrain(a: dict) -> None:
    ds = read_dataset(a["data"], min_views=2)
    config = ModelConfig(latent=a["latent"], hidden=a["hidden"], features=a["features"],
                         march_steps=a["march_steps"], classes=ds.num_classes, seed=a["seed"])
    model = SceneModel(config)
    tc = TrainConfig(steps=a["steps"], batch_rays=a["batch_rays"], lr=a["lr"], seed=a["seed"],
                     weights=LossWeights(rgb=a["w_rgb"], latent=a["w_latent"]), log_every=a["log_every"])
    pretrain(model, ds, tc)
    model.save(a["out"])


def cmd_fit_head(a: dict) -> None:
    model = _load_model(a["checkpoint"])
    ds = read_dataset(a["data"])
    if a["labels"]:
        pairs = read_label_list(a["labels"])
        if not pairs:
            raise UsageError(f"label list {a['labels']} is empty")
    else:
        known = [inst for inst in ds.instances if inst.id in model.codes]
        sub = type(ds)(ds.class_names, known)
        pairs = select_labeled_views(sub, a["num_labeled"], a["seed"], a["per_instance"])
        write_label_list(a["out"] + ".labels", pairs)
    obs = []
    for iid, j in pairs:
        try:
            rec = ds.instance(iid).views[j]
        except IndexError:
            raise UsageError(f"instance {iid} has no view {j}") from None
        obs.append(LabeledObservation.from_record(rec, instance_id=iid, rgb=False))
    fit_seg_head(model, obs, steps=a["steps"], lr=a["lr"], seed=a["seed"])
    model.save(a["out"])


def cmd_infer(a: dict) -> None:
    if not (a["rgb"] or a["mask"]):
        raise UsageError("pass --rgb, --mask or both")
    model = _load_model(a["checkpoint"])
    obs = []
    for prefix in a["view"]:
        pose = _read_pose(prefix + ".pose")
        rgb = formats.read_ppm(prefix + ".ppm").astype(np.float64) / 255.0 if a["rgb"] else None
        mask = formats.read_pgm(prefix + ".pgm") if a["mask"] else None
        img = rgb if rgb is not None else mask
        h, w = img.shape[:2]
        if h != w:
            raise UsageError(f"{prefix}: only square images are supported")
        obs.append(LabeledObservation(_view(pose, w), rgb, mask))
    weights = LossWeights(rgb=1.0 if a["rgb"] else 0.0, ce=LossWeights().ce if a["mask"] else 0.0)
    res = infer_latent(model, obs, iters=a["iters"], lr=a["lr"], weights=weights, seed=a["seed"])
    log.info("event=infer initial=%.6g final=%.6g", res.initial_objective, res.objective)
    _write_code(a["out"], res.code.data)


def cmd_render(a: dict) -> None:
    model = _load_model(a["checkpoint"])
    code = _load_code(model, a["code"])
    out = model.render(code, _view(_read_pose(a["pose"]), a["resolution"]))
    formats.write_ppm(a["out"] + ".ppm", out.rgb)
    formats.write_pgm(a["out"] + ".pgm", out.labels.astype(np.uint8))


def cmd_interpolate(a: dict) -> None:
    if a["steps"] < 2:
        raise UsageError("--steps must be >= 2")
    model = _load_model(a["checkpoint"])
    za = _code_array(_load_code(model, a["code_a"]))
    zb = _code_array(_load_code(model, a["code_b"]))
    poses = orbit_poses(a["steps"], model.config.camera_radius, a["elevation"])
    os.makedirs(a["out"], exist_ok=True)
    written = []
    try:
        for i, pose in enumerate(poses):
            alpha = i / (a["steps"] - 1)
            out = model.render(interpolate_codes(za, zb, alpha), _view(pose, a["resolution"]))
            stem = os.path.join(a["out"], f"frame_{i:03d}")
            formats.write_ppm(stem + ".ppm", out.rgb)
            formats.write_pgm(stem + ".pgm", out.labels.astype(np.uint8))
            written += [stem + ".ppm", stem + ".pgm"]
    except BaseException:
        for f in written:
            os.remove(f)
        raise


def cmd_pointcloud(a: dict) -> None:
    model = _load_model(a["checkpoint"])
    code = _load_code(model, a["code"])
    views = [_view(p, a["resolution"]) for p in orbit_poses(a["views"], model.config.camera_radius)]
    pc = point_cloud(model.scene(code), views, model.marcher, model.rgb_head, model.seg_head)
    formats.write_ply(a["out"], pc.points, pc.colors, pc.labels)
    log.info("event=pointcloud points=%d out=%s", len(pc), a["out"])


def cmd_eval(a: dict) -> None:
    model = _load_model(a["checkpoint"])
    ds = read_dataset(a["data"])
    records, preds, pairs_rgb = [], {}, []
    per_instance: dict[str, list[int]] = {}
    for inst in ds.instances:
        if not a["gt_predictions"] and inst.id not in model.codes:
            continue
        for rec in inst.views:
            if a["split"] != "all" and rec.split != a["split"]:
                continue
            k = len(records)
            records.append(rec)
            per_instance.setdefault(inst.id, []).append(k)
            if a["gt_predictions"]:
                preds[k] = rec.mask
                pairs_rgb.append((rec.rgb, rec.rgb))
            else:
                out = model.render(inst.id, rec.view)
                preds[k] = out.labels
                pairs_rgb.append((out.rgb, rec.rgb))
    if not records:
        raise UsageError(f"no {a['split']} views of instances known to the checkpoint")
    c = ds.num_classes
    seg = [(preds[k], records[k].mask) for k in range(len(records))]
    rng = np.random.default_rng(a["seed"])
    cand = [(i, j) for ks in per_instance.values() for i in ks for j in ks if i < j]
    cons = float("nan")
    if cand:
        pick = rng.choice(len(cand), size=min(a["pairs"], len(cand)), replace=False)
        cons = consistency_from_labels(preds, records, [cand[i] for i in pick], seed=a["seed"])
    report = MetricReport(miou(seg, c), shape_miou(seg, c),
                          float(np.mean([psnr(p, g) for p, g in pairs_rgb])), cons)
    text = report.to_json() if a["report"].endswith(".json") else report.to_text()
    with formats.atomic_open(a["report"], "w") as fh:
        fh.write(text + "\n")
    log.info("event=eval %s", report.to_text())


def cmd_export_features(a: dict) -> None:
    model = _load_model(a["checkpoint"])
    code = _load_code(model, a["code"])
    out = model.render(code, _view(_read_pose(a["pose"]), a["resolution"]))
    feats = out.features.reshape(-1, out.features.shape[-1])
    if a["mask"]:
        labels = formats.read_pgm(a["mask"]).reshape(-1).astype(np.int64)
        if labels.size != feats.shape[0]:
            raise UsageError("mask size does not match --resolution")
    else:
        labels = np.full(feats.shape[0], -1)
    with formats.atomic_open(a["out"], "w") as fh:
        for lab, row in zip(labels, feats):
            fh.write(f"{lab} " + " ".join(f"{x:.9g}" for x in row) + "\n")


HANDLERS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "fit-head": cmd_fit_head,
    "infer": cmd_infer,
    "render": cmd_render,
    "interpolate": cmd_interpolate,
    "pointcloud": cmd_pointcloud,
    "eval": cmd_eval,
    "export-features": cmd_export_features,
}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.INFO,
                        format="%(name)s %(message)s", stream=sys.stderr, force=True)
    try:
        args = resolve(ns.command, ns)
        HANDLERS[ns.command](args)
    except UsageError as exc:
        print(f"srnseg {ns.command}: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, DatasetError, CheckpointError, formats.FormatError, ValueError, KeyError) as exc:
        print(f"srnseg {ns.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
