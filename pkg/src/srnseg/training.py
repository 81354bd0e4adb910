"""Optimization procedures: RGB pre-training, linear head fitting, latent inference."""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue, Tape
from .camera import rays_for_view
from .data import Dataset, LabeledObservation
from .model import SceneModel
from .renderer import march
from .scene import generate_scene, init_latent

log = logging.getLogger("srnseg.train")


@dataclass
class LossWeights:
    rgb: float = 1.0
    ce: float = 0.04  # 200:8 relative to rgb
    latent: float = 1e-3

    def __post_init__(self):
        if min(self.rgb, self.ce, self.latent) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.rgb == 0 and self.ce == 0:
            raise ValueError("at least one of the rgb / ce weights must be positive")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_rays: int = 1024
    lr: float = 4e-4
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    log_every: int = 100
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_rays < 1:
            raise ValueError("batch_rays must be >= 1")


class Adam:
    """Adam with bias correction and per-parameter step counters.

    Only parameters that currently hold a gradient are updated, so per-instance
    codes move only on steps that sampled their instance.
    """

    def __init__(self, lr: float = 4e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state: dict[int, list] = {}
        self.skipped = 0

    def step(self, params: Iterable[DiffValue]) -> bool:
        params = [p for p in params if p._grad is not None]
        if not all(np.isfinite(p._grad).all() for p in params):
            self.skipped += 1
            log.warning("event=skip_step reason=nonfinite_grad skipped=%d", self.skipped)
            return False
        for p in params:
            g = p._grad
            st = self.state.get(p.node_id)
            if st is None:
                st = self.state[p.node_id] = [np.zeros_like(p.data), np.zeros_like(p.data), 0]
            m, v, t = st
            t += 1
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            st[2] = t
        return True


def zero_grads(params: Iterable[DiffValue]) -> None:
    for p in params:
        p.zero_grad()


@contextmanager
def frozen(params: Iterable[DiffValue]):
    """Treat ``params`` as constants for the duration of the block."""
    params = list(params)
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


def _log_line(step: int, t0: float, **terms) -> None:
    parts = [f"step={step}"] + [f"{k}={v:.6g}" for k, v in terms.items()] + [f"time={time.time() - t0:.2f}"]
    log.info(" ".join(parts))


def _rgb_loss(model: SceneModel, z, origins, dirs, target, weights: LossWeights):
    scene = generate_scene(model.hypernet, z)
    res = march(scene, origins, dirs, model.marcher)
    rgb = model.rgb_head(res.features)
    rgb_term = ad.mse(rgb, target)
    lat_term = ad.sum_squares(z)
    loss = ad.add(ad.scale(rgb_term, weights.rgb), ad.scale(lat_term, weights.latent))
    return loss, rgb_term.item(), lat_term.item()


def pretrain(model: SceneModel, dataset: Dataset, config: TrainConfig, callback=None) -> list[float]:
    """Fit hypernetwork, marcher, RGB head and one code per instance to RGB views only.

    Returns the per-step total loss.  ``callback(step, model)`` runs after every
    optimizer step when given.
    """
    for inst in dataset.instances:
        if len(inst.train_views) < 2:
            raise ValueError(f"instance {inst.id} has fewer than 2 training views")
    rng = np.random.default_rng(config.seed)
    for inst in dataset.instances:
        if inst.id not in model.codes:
            model.add_code(inst.id, rng)
    rays = {}
    for inst in dataset.instances:
        for j, rec in enumerate(inst.train_views):
            o, d = rays_for_view(rec.view)
            rays[inst.id, j] = (o.reshape(-1, 3), d.reshape(-1, 3), rec.rgb.reshape(-1, 3))
    shared = list(model.backbone_parameters().values())
    opt = Adam(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    history = []
    t0 = time.time()
    for step in range(config.steps):
        inst = dataset.instances[rng.integers(len(dataset.instances))]
        j = int(rng.integers(len(inst.train_views)))
        o, d, target = rays[inst.id, j]
        if config.batch_rays < o.shape[0]:
            idx = rng.choice(o.shape[0], size=config.batch_rays, replace=False)
            o, d, target = o[idx], d[idx], target[idx]
        z = model.codes[inst.id]
        with Tape() as tape:
            loss, rgb_term, lat_term = _rgb_loss(model, z, o, d, target, config.weights)
        tape.backward(loss)
        params = shared + [z]
        opt.step(params)
        zero_grads(params)
        history.append(loss.item())
        if config.log_every and (step % config.log_every == 0 or step == config.steps - 1):
            _log_line(step, t0, loss=loss.item(), rgb=rgb_term, latent=lat_term)
        if callback is not None:
            callback(step, model)
    return history


def _features_for(model: SceneModel, obs: LabeledObservation) -> np.ndarray:
    out = model.render(obs.instance_id, obs.view)
    return out.features.reshape(-1, out.features.shape[-1])


def fit_seg_head(
    model: SceneModel,
    labeled: Sequence[LabeledObservation],
    steps: int = 2000,
    lr: float = 1e-2,
    seed: int = 0,
    log_every: int = 500,
) -> list[float]:
    """Train only the linear segmentation head on frozen features at the marched surface points."""
    if not labeled:
        raise ValueError("need at least one labeled observation")
    for obs in labeled:
        if obs.mask is None:
            raise ValueError("labeled observation without a mask")
        if obs.instance_id not in model.codes:
            raise KeyError(f"unknown instance id {obs.instance_id!r}")
    feats = np.concatenate([_features_for(model, obs) for obs in labeled])
    labels = np.concatenate([obs.mask.reshape(-1) for obs in labeled]).astype(np.int64)
    return fit_linear_classifier(model.seg_head, feats, labels, steps=steps, lr=lr, log_every=log_every)


def fit_linear_classifier(head, inputs: np.ndarray, labels: np.ndarray, steps: int, lr: float,
                          log_every: int = 0) -> list[float]:
    """Full-batch softmax regression of ``head`` on fixed inputs."""
    params = list(head.params.values())
    opt = Adam(lr=lr)
    x = DiffValue(inputs)
    history = []
    t0 = time.time()
    for step in range(steps):
        with Tape() as tape:
            loss = ad.softmax_cross_entropy(head(x), labels)
        tape.backward(loss)
        opt.step(params)
        zero_grads(params)
        history.append(loss.item())
        if log_every and (step % log_every == 0 or step == steps - 1):
            _log_line(step, t0, ce=loss.item())
    return history


@dataclass
class InferenceResult:
    code: DiffValue
    objective: float
    initial_objective: float
    history: list[float]


def latent_objective(model: SceneModel, z, observations: Sequence[LabeledObservation],
                     weights: LossWeights, cache=None) -> DiffValue:
    """Mean over observations of the weighted rgb / cross-entropy terms, plus the code prior."""
    scene = generate_scene(model.hypernet, z)
    terms = []
    for i, obs in enumerate(observations):
        if cache is not None and i in cache:
            o, d = cache[i]
        else:
            o, d = rays_for_view(obs.view)
            o, d = o.reshape(-1, 3), d.reshape(-1, 3)
            if cache is not None:
                cache[i] = (o, d)
        res = march(scene, o, d, model.marcher)
        if obs.rgb is not None and weights.rgb > 0:
            rgb = model.rgb_head(res.features)
            terms.append(ad.scale(ad.mse(rgb, obs.rgb.reshape(-1, 3)), weights.rgb))
        if obs.mask is not None and weights.ce > 0:
            logits = model.seg_head(res.features)
            terms.append(ad.scale(ad.softmax_cross_entropy(logits, obs.mask.reshape(-1)), weights.ce))
    total = ad.scale(ad.sum_squares(z), weights.latent)
    for t in terms:
        total = ad.add(total, ad.scale(t, 1.0 / len(observations)))
    return total


def infer_latent(
    model: SceneModel,
    observations: Sequence[LabeledObservation],
    iters: int = 300,
    lr: float = 1e-2,
    weights: LossWeights | None = None,
    seed: int = 0,
    log_every: int = 0,
) -> InferenceResult:
    """Optimize a fresh code against the observations with every network weight frozen.

    Returns the best iterate seen, so the result never scores worse than the
    initialization.
    """
    if not observations:
        raise ValueError("need at least one observation")
    for obs in observations:
        if obs.rgb is None and obs.mask is None:
            raise ValueError("observation has neither rgb nor mask")
    weights = weights or LossWeights()
    rng = np.random.default_rng(seed)
    z = init_latent(model.config.latent, rng)
    opt = Adam(lr=lr)
    cache = {}
    history = []
    best = None
    t0 = time.time()
    with frozen(model.named_parameters().values()):
        for it in range(iters + 1):
            with Tape() as tape:
                obj = latent_objective(model, z, observations, weights, cache)
            val = obj.item()
            history.append(val)
            if best is None or val < best[0]:
                best = (val, z.data.copy())
            if it == iters:
                break
            tape.backward(obj)
            opt.step([z])
            z.zero_grad()
            if log_every and it % log_every == 0:
                _log_line(it, t0, objective=val)
    return InferenceResult(DiffValue(best[1], requires_grad=False, name="z"), best[0], history[0], history)
