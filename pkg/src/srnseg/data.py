"""Posed multi-view datasets: in-memory generation and on-disk layout.

On disk a dataset is a directory holding ``manifest.json`` plus one folder per
instance with ``NNN.ppm`` (rgb), ``NNN.pgm`` (mask), ``NNN.depth`` and
``NNN.pose`` files per view.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import formats
from .camera import DEFAULT_RADIUS, CameraView, Intrinsics, Pose, sample_sphere_poses
from .synthetic import TEMPLATES, make_block_object, reference_render

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass
class ViewRecord:
    view: CameraView
    rgb: np.ndarray  # float [H, W, 3] in [0, 1]
    mask: np.ndarray  # uint8 [H, W]
    depth: np.ndarray  # [H, W], inf where no surface
    split: str = "train"


@dataclass
class Instance:
    id: str
    seed: int
    template: str
    views: list[ViewRecord]

    @property
    def train_views(self) -> list[ViewRecord]:
        return [v for v in self.views if v.split == "train"]

    @property
    def test_views(self) -> list[ViewRecord]:
        return [v for v in self.views if v.split == "test"]


@dataclass
class Dataset:
    class_names: list[str]
    instances: list[Instance]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def instance(self, instance_id: str) -> Instance:
        for inst in self.instances:
            if inst.id == instance_id:
                return inst
        raise KeyError(f"unknown instance id {instance_id!r}")

    def __len__(self) -> int:
        return len(self.instances)


@dataclass
class LabeledObservation:
    """One posed view with an RGB image, a class mask, or both."""

    view: CameraView
    rgb: np.ndarray | None = None
    mask: np.ndarray | None = None
    instance_id: str | None = None

    def __post_init__(self):
        if self.rgb is None and self.mask is None:
            raise ValueError("observation needs an rgb image or a mask")

    @classmethod
    def from_record(cls, rec: ViewRecord, instance_id=None, rgb=True, mask=True) -> "LabeledObservation":
        return cls(rec.view, rec.rgb if rgb else None, rec.mask if mask else None, instance_id)


def generate_dataset(
    template: str,
    instances: int,
    train_views: int,
    test_views: int = 0,
    resolution: int = 32,
    seed: int = 0,
    radius: float = DEFAULT_RADIUS,
    id_prefix: str | None = None,
) -> Dataset:
    """Render ``instances`` random objects, each from ``train_views + test_views`` sphere poses."""
    if instances < 1:
        raise ValueError("need at least one instance")
    if train_views < 1:
        raise ValueError("need at least one training view")
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=instances)
    intr = Intrinsics.for_resolution(resolution)
    prefix = template if id_prefix is None else id_prefix
    out = []
    for i, s in enumerate(seeds):
        scene = make_block_object(template, int(s))
        poses = sample_sphere_poses(train_views + test_views, radius, seed=int(s))
        views = []
        for j, pose in enumerate(poses):
            view = CameraView(intr, pose, resolution, resolution)
            rgb, mask, depth = reference_render(scene, view)
            views.append(ViewRecord(view, rgb, mask, depth, "train" if j < train_views else "test"))
        out.append(Instance(f"{prefix}_{i:04d}", int(s), template, views))
    return Dataset(list(TEMPLATES[template]), out)


def write_dataset(dataset: Dataset, root) -> dict:
    root = os.fspath(root)
    os.makedirs(root, exist_ok=True)
    entries = []
    for inst in dataset.instances:
        views = []
        for j, rec in enumerate(inst.views):
            stem = f"{inst.id}/{j:03d}"
            formats.write_ppm(os.path.join(root, stem + ".ppm"), rec.rgb)
            formats.write_pgm(os.path.join(root, stem + ".pgm"), rec.mask)
            formats.write_depth(os.path.join(root, stem + ".depth"), rec.depth)
            with formats.atomic_open(os.path.join(root, stem + ".pose"), "w") as fh:
                fh.write(rec.view.pose.to_text() + "\n")
            views.append({"pose": stem + ".pose", "rgb": stem + ".ppm", "mask": stem + ".pgm",
                          "depth": stem + ".depth", "split": rec.split})
        k = inst.views[0].view.intrinsics
        entries.append({
            "id": inst.id,
            "seed": inst.seed,
            "template": inst.template,
            "intrinsics": [k.fx, k.fy, k.cx, k.cy],
            "width": inst.views[0].view.width,
            "height": inst.views[0].view.height,
            "views": views,
        })
    manifest = {
        "version": MANIFEST_VERSION,
        "num_classes": dataset.num_classes,
        "class_names": dataset.class_names,
        "instances": entries,
    }
    with formats.atomic_open(os.path.join(root, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return manifest


def read_dataset(root, min_views: int = 1) -> Dataset:
    root = os.fspath(root)
    path = os.path.join(root, MANIFEST)
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    if manifest.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"{path}: unsupported manifest version {manifest.get('version')}")
    instances = []
    for entry in manifest["instances"]:
        intr = Intrinsics(*entry["intrinsics"])
        views = []
        for v in entry["views"]:
            files = {k: os.path.join(root, v[k]) for k in ("pose", "rgb", "mask", "depth")}
            for f in files.values():
                if not os.path.isfile(f):
                    raise DatasetError(f"missing dataset file {f}")
            try:
                with open(files["pose"]) as fh:
                    pose = Pose.from_text(fh.read())
                rgb = formats.read_ppm(files["rgb"]).astype(np.float64) / 255.0
                mask = formats.read_pgm(files["mask"])
                depth = formats.read_depth(files["depth"])
            except ValueError as exc:
                raise DatasetError(str(exc)) from exc
            view = CameraView(intr, pose, entry["width"], entry["height"])
            if rgb.shape[:2] != (view.height, view.width) or mask.shape != rgb.shape[:2]:
                raise DatasetError(f"image size mismatch in {files['rgb']}")
            views.append(ViewRecord(view, rgb, mask, depth, v.get("split", "train")))
        if len([v for v in views if v.split == "train"]) < min_views:
            raise DatasetError(f"instance {entry['id']} has fewer than {min_views} training views")
        instances.append(Instance(entry["id"], entry["seed"], entry["template"], views))
    return Dataset(list(manifest["class_names"]), instances)


def select_labeled_views(dataset: Dataset, count: int, seed: int = 0,
                         per_instance: int | None = None, max_tries: int = 1000) -> list[tuple[str, int]]:
    """Random (instance id, view index) training pairs whose masks cover every class.

    Subsets are rejection-sampled from ``seed`` until every class id that occurs
    anywhere in the training masks occurs in the subset.  With ``per_instance``
    set, ``ceil(count / per_instance)`` distinct instances contribute up to
    ``per_instance`` views each; otherwise views are drawn from the whole pool.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    pool = {inst.id: [(j, set(np.unique(rec.mask).tolist())) for j, rec in enumerate(inst.views)
                      if rec.split == "train"] for inst in dataset.instances}
    flat = [(iid, j, cl) for iid, views in pool.items() for j, cl in views]
    if count > len(flat):
        raise ValueError(f"asked for {count} labeled views but only {len(flat)} exist")
    target = set().union(*(cl for _, _, cl in flat))
    ids = list(pool)
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        if per_instance is None:
            picks = [flat[i] for i in rng.choice(len(flat), size=count, replace=False)]
        else:
            n_inst = -(-count // per_instance)
            if n_inst > len(ids):
                raise ValueError(f"{count} views at {per_instance} per instance needs {n_inst} instances")
            picks = []
            for k in rng.choice(len(ids), size=n_inst, replace=False):
                views = pool[ids[k]]
                for v in rng.choice(len(views), size=min(per_instance, len(views)), replace=False):
                    picks.append((ids[k],) + views[v])
            picks = picks[:count]
        if set().union(*(cl for _, _, cl in picks)) == target:
            return [(iid, int(j)) for iid, j, _ in picks]
    raise ValueError(f"no class-covering subset of {count} views found in {max_tries} tries")


def read_label_list(path) -> list[tuple[str, int]]:
    """Parse ``instance_id view_index`` lines; blank lines and ``#`` comments are skipped."""
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or not parts[1].isdigit():
                raise DatasetError(f"{path}:{n}: expected 'instance_id view_index'")
            out.append((parts[0], int(parts[1])))
    return out


def write_label_list(path, pairs: list[tuple[str, int]]) -> None:
    with formats.atomic_open(path, "w") as fh:
        for iid, j in pairs:
            fh.write(f"{iid} {j}\n")
