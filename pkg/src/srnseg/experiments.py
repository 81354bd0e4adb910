"""Reusable experiment pipelines shared by the acceptance suite and ``scripts/``.

* :func:`run_overfit` fits one object from its views and scores train-view
  PSNR and foreground depth error against the analytic renderer.
* :func:`build_protocol` runs the semi-supervised pipeline: RGB-only
  pre-training on a corpus, then a linear segmentation head fitted on a few
  labeled views.  The evaluation helpers below score the result.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .camera import rays_for_view
from .data import Dataset, LabeledObservation, ViewRecord, generate_dataset, select_labeled_views
from .evaluation import consistency_from_labels, miou, psnr
from .model import ModelConfig, SceneModel
from .renderer import SegHead
from .scene import init_latent
from .training import LossWeights, TrainConfig, fit_linear_classifier, fit_seg_head, infer_latent, pretrain

log = logging.getLogger("srnseg.experiments")


# ---------------------------------------------------------------- single-object overfit


@dataclass
class OverfitConfig:
    template: str = "chair"
    object_seed: int = 3
    views: int = 16
    resolution: int = 32
    # a wider scene MLP fits thin parts and silhouettes noticeably better in 2000 steps
    model: ModelConfig = field(default_factory=lambda: ModelConfig(hidden=64))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=2000, lr=2e-3, log_every=0))


@dataclass
class OverfitResult:
    model: SceneModel
    dataset: Dataset
    psnr_mean: float
    depth_median: float
    seconds: float


def score_views(model: SceneModel, instance_id: str, records: list[ViewRecord]) -> tuple[float, float]:
    """Mean PSNR and median foreground |depth error| of ``records`` rendered from a stored code."""
    ps, errs = [], []
    for rec in records:
        out = model.render(instance_id, rec.view)
        ps.append(psnr(out.rgb, rec.rgb))
        fg = rec.mask > 0
        errs.append(np.abs(out.depth[fg] - rec.depth[fg]))
    return float(np.mean(ps)), float(np.median(np.concatenate(errs)))


def run_overfit(cfg: OverfitConfig, callback=None) -> OverfitResult:
    # a one-instance corpus whose only object is generated from ``object_seed``
    ds = generate_dataset(cfg.template, 1, cfg.views, 0, cfg.resolution, seed=cfg.object_seed)
    model = SceneModel(cfg.model)
    t0 = time.time()
    pretrain(model, ds, cfg.train, callback=callback)
    seconds = time.time() - t0
    inst = ds.instances[0]
    p, d = score_views(model, inst.id, inst.train_views)
    return OverfitResult(model, ds, p, d, seconds)


# ---------------------------------------------------------------- semi-supervised protocol


@dataclass
class ProtocolConfig:
    template: str = "chair"
    instances: int = 12
    train_views: int = 16
    test_views: int = 8
    resolution: int = 32
    data_seed: int = 7
    labeled_views: int = 10
    label_seed: int = 0
    head_steps: int = 2000
    head_lr: float = 1e-2
    model: ModelConfig = field(default_factory=lambda: ModelConfig(hidden=64))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=8000, lr=2e-3, log_every=500))


@dataclass
class Protocol:
    config: ProtocolConfig
    model: SceneModel
    dataset: Dataset
    labeled: list[tuple[str, int]]
    pretrained: dict[str, np.ndarray]  # parameter snapshot before head fitting
    fitted: dict[str, np.ndarray]  # snapshot after head fitting
    seconds: dict[str, float]


def build_protocol(cfg: ProtocolConfig, model: SceneModel | None = None) -> Protocol:
    """Pretrain on RGB only (skipped when a pretrained ``model`` is passed), then fit the head."""
    ds = generate_dataset(cfg.template, cfg.instances, cfg.train_views, cfg.test_views, cfg.resolution,
                          seed=cfg.data_seed)
    seconds = {}
    if model is None:
        model = SceneModel(cfg.model)
        t0 = time.time()
        pretrain(model, ds, cfg.train)
        seconds["pretrain"] = time.time() - t0
    pretrained = model.snapshot()
    labeled = select_labeled_views(ds, cfg.labeled_views, seed=cfg.label_seed)
    obs = [LabeledObservation.from_record(ds.instance(iid).views[j], iid, rgb=False) for iid, j in labeled]
    t0 = time.time()
    fit_seg_head(model, obs, steps=cfg.head_steps, lr=cfg.head_lr, log_every=0)
    seconds["fit_head"] = time.time() - t0
    return Protocol(cfg, model, ds, labeled, pretrained, model.snapshot(), seconds)


def heldout_miou(model: SceneModel, dataset: Dataset) -> float:
    """Per-image mIOU over every test view of every instance, rendered from the stored codes."""
    pairs = []
    for inst in dataset.instances:
        for rec in inst.test_views:
            pairs.append((model.render(inst.id, rec.view).labels, rec.mask))
    return miou(pairs, dataset.num_classes)


def surface_inputs(rec: ViewRecord) -> np.ndarray:
    """Per-pixel world coordinate of the true surface (zeros on background) next to the true rgb."""
    o, d = rays_for_view(rec.view)
    depth = np.where(np.isfinite(rec.depth), rec.depth, 0.0)
    xyz = o + depth[..., None] * d
    xyz[~np.isfinite(rec.depth)] = 0.0
    return np.concatenate([xyz, rec.rgb], axis=-1).reshape(-1, 6)


def control_miou(dataset: Dataset, labeled: list[tuple[str, int]], steps: int = 2000, lr: float = 1e-2) -> float:
    """Linear classifier on raw (world xyz, rgb) inputs with the same labels, scored on the test views."""
    recs = [dataset.instance(iid).views[j] for iid, j in labeled]
    x = np.concatenate([surface_inputs(r) for r in recs])
    y = np.concatenate([r.mask.reshape(-1) for r in recs]).astype(np.int64)
    head = SegHead(6, dataset.num_classes)
    fit_linear_classifier(head, x, y, steps=steps, lr=lr)
    pairs = []
    for inst in dataset.instances:
        for rec in inst.test_views:
            logits = head(surface_inputs(rec)).data
            pairs.append((np.argmax(logits, axis=1).reshape(rec.mask.shape), rec.mask))
    return miou(pairs, dataset.num_classes)


def multiview_consistency(model: SceneModel, dataset: Dataset, pairs: int = 50, samples: int = 200,
                          seed: int = 0) -> float:
    """Label agreement at shared surface points over random same-instance view pairs."""
    rng = np.random.default_rng(seed)
    records, owner = [], []
    for inst in dataset.instances:
        for rec in inst.views:
            records.append(rec)
            owner.append(inst.id)
    chosen = []
    while len(chosen) < pairs:
        k = rng.integers(len(dataset.instances))
        n = len(dataset.instances[k].views)
        base = sum(len(dataset.instances[i].views) for i in range(k))
        a, b = rng.choice(n, size=2, replace=False)
        chosen.append((base + int(a), base + int(b)))
    needed = sorted({i for p in chosen for i in p})
    preds = {i: model.render(owner[i], records[i].view).labels for i in needed}
    return consistency_from_labels(preds, records, chosen, samples=samples, seed=seed)


@dataclass
class CrossModalResult:
    instance_id: str
    miou: float
    psnr: float
    control_psnr: float
    objective: float
    initial_objective: float

    @property
    def gain(self) -> float:
        return self.psnr - self.control_psnr


def cross_modal(model: SceneModel, instances: int = 12, seed: int = 1234, iters: int = 300, lr: float = 1e-2,
                weights: LossWeights | None = None, template: str = "chair",
                resolution: int = 32) -> list[CrossModalResult]:
    """Mask-only code inference on novel instances, scored on a second view.

    The control renders the second view from the random initial code that
    inference starts from.
    """
    weights = weights or LossWeights(rgb=0.0)
    ds = generate_dataset(template, instances, 2, 0, resolution, seed=seed, id_prefix="novel")
    out = []
    for k, inst in enumerate(ds.instances):
        first, second = inst.views
        res = infer_latent(model, [LabeledObservation(first.view, mask=first.mask)], iters=iters, lr=lr,
                           weights=weights, seed=k)
        pred = model.render(res.code, second.view)
        z0 = init_latent(model.config.latent, np.random.default_rng(k))
        ctrl = model.render(z0, second.view)
        out.append(CrossModalResult(inst.id, miou([(pred.labels, second.mask)], ds.num_classes),
                                    psnr(pred.rgb, second.rgb), psnr(ctrl.rgb, second.rgb),
                                    res.objective, res.initial_objective))
        log.info("event=cross_modal id=%s miou=%.4f psnr=%.2f control=%.2f", inst.id, out[-1].miou,
                 out[-1].psnr, out[-1].control_psnr)
    return out
