"""Segmentation metrics, PSNR and cross-view label consistency."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .camera import CameraView, project, rays_for_view
from .renderer import render

PSNR_IDENTICAL = float("inf")


@dataclass
class SegmentationResult:
    pred: np.ndarray
    gt: np.ndarray

    def __post_init__(self):
        self.pred = np.asarray(self.pred)
        self.gt = np.asarray(self.gt)
        if self.pred.shape != self.gt.shape:
            raise ValueError(f"prediction {self.pred.shape} and ground truth {self.gt.shape} differ in shape")


@dataclass
class MetricReport:
    miou: float
    shape_miou: float
    psnr_mean: float
    consistency_rate: float

    def to_text(self) -> str:
        return "\n".join(f"{k}={v:.6f}" for k, v in asdict(self).items()) + "\n"

    def to_json(self) -> str:
        return json.dumps({k: (None if not np.isfinite(v) else v) for k, v in asdict(self).items()}, indent=1)


def _as_results(results) -> list[SegmentationResult]:
    out = [r if isinstance(r, SegmentationResult) else SegmentationResult(*r) for r in results]
    if not out:
        raise ValueError("no segmentation results given")
    return out


def _counts(pred: np.ndarray, gt: np.ndarray, c: int) -> tuple[np.ndarray, np.ndarray]:
    p = pred.reshape(-1).astype(np.int64)
    g = gt.reshape(-1).astype(np.int64)
    if p.size and (max(p.max(), g.max()) >= c or min(p.min(), g.min()) < 0):
        raise ValueError(f"class ids must lie in [0, {c})")
    inter = np.bincount(g[p == g], minlength=c)
    union = np.bincount(p, minlength=c) + np.bincount(g, minlength=c) - inter
    return inter, union


def miou(results: Sequence, c: int, ignore_background: bool = False) -> float:
    """Per image: mean IoU over classes present in GT or prediction; then the mean over images."""
    scores = []
    for r in _as_results(results):
        inter, union = _counts(r.pred, r.gt, c)
        present = union > 0
        if ignore_background:
            present[0] = False
        if present.any():
            scores.append(np.mean(inter[present] / union[present]))
    if not scores:
        raise ValueError("no image contains any evaluated class")
    return float(np.mean(scores))


def shape_miou(results: Sequence, c: int, ignore_background: bool = False) -> float:
    """Per class: IoU of pooled intersection and union counts over all images; then the class mean."""
    inter = np.zeros(c, dtype=np.int64)
    union = np.zeros(c, dtype=np.int64)
    for r in _as_results(results):
        i, u = _counts(r.pred, r.gt, c)
        inter += i
        union += u
    present = union > 0
    if ignore_background:
        present[0] = False
    if not present.any():
        raise ValueError("no evaluated class occurs anywhere")
    return float(np.mean(inter[present] / union[present]))


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """``10 log10(1 / MSE)`` for images in [0, 1]; ``inf`` for identical images."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"image shapes differ: {pred.shape} vs {gt.shape}")
    err = np.mean((pred - gt) ** 2)
    if err == 0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(1.0 / err))


def visible_correspondences(
    view_a: CameraView,
    depth_a: np.ndarray,
    mask_a: np.ndarray,
    view_b: CameraView,
    depth_b: np.ndarray,
    samples: int,
    rng: np.random.Generator,
    tol: float = 0.02,
):
    """Sample foreground pixels of view A whose surface point is unoccluded in view B.

    Returns matching ``(rows_a, cols_a, rows_b, cols_b)`` index arrays.
    """
    fg = np.flatnonzero((mask_a.reshape(-1) > 0) & np.isfinite(depth_a.reshape(-1)))
    empty = (np.zeros(0, np.int64),) * 4
    if fg.size == 0:
        return empty
    pick = rng.choice(fg, size=min(samples, fg.size), replace=False)
    o, d = rays_for_view(view_a)
    pts = o.reshape(-1, 3)[pick] + depth_a.reshape(-1)[pick, None] * d.reshape(-1, 3)[pick]
    uv, z = project(pts, view_b)
    ub = np.floor(uv[:, 0]).astype(np.int64)
    vb = np.floor(uv[:, 1]).astype(np.int64)
    inside = (z > 0) & (ub >= 0) & (ub < view_b.width) & (vb >= 0) & (vb < view_b.height)
    dist_b = np.linalg.norm(pts - view_b.pose.translation, axis=1)
    ok = inside.copy()
    ok[inside] = np.abs(depth_b[vb[inside], ub[inside]] - dist_b[inside]) < tol
    rows_a, cols_a = np.divmod(pick[ok], view_a.width)
    return rows_a, cols_a, vb[ok], ub[ok]


def consistency_from_labels(pred_masks, records, pairs, samples: int = 200, seed: int = 0, tol: float = 0.02) -> float:
    """Fraction of mutually visible surface samples whose predicted labels agree across view pairs.

    ``pred_masks[i]`` is the predicted label image of ``records[i]`` (a view record
    with ``view``, ``mask`` and ``depth``); ``pairs`` index into both.
    """
    rng = np.random.default_rng(seed)
    agree = total = 0
    for a, b in pairs:
        ra, ca, rb, cb = visible_correspondences(records[a].view, records[a].depth, records[a].mask,
                                                 records[b].view, records[b].depth, samples, rng, tol)
        agree += int(np.sum(pred_masks[a][ra, ca] == pred_masks[b][rb, cb]))
        total += ra.size
    if total == 0:
        raise ValueError("no mutually visible surface samples in the given view pairs")
    return agree / total


def consistency_rate(model, code, records, pairs, samples: int = 200, seed: int = 0, tol: float = 0.02) -> float:
    """:func:`consistency_from_labels` with label images rendered by ``model`` for ``code``."""
    scene = model.scene(code)
    needed = sorted({i for p in pairs for i in p})
    preds = {i: render(scene, records[i].view, model.marcher, model.rgb_head, model.seg_head).labels for i in needed}
    return consistency_from_labels(preds, records, pairs, samples, seed, tol)
