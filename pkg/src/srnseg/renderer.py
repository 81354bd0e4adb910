"""Differentiable LSTM ray marcher and the per-point RGB / segmentation heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue
from .camera import DEFAULT_RADIUS, CameraView, rays_for_view
from .scene import SceneFunction, scene_features


class NonFiniteFeatureError(FloatingPointError):
    def __init__(self, ray_index: int):
        super().__init__(f"non-finite scene feature on ray {ray_index}")
        self.ray_index = ray_index


def _linear_init(rng, fan_in, fan_out, gain=2.0):
    return rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out))


class Marcher:
    """LSTM that turns the feature at the current ray point into a step length."""

    def __init__(
        self,
        features: int,
        hidden: int,
        rng: np.random.Generator,
        steps: int = 10,
        camera_radius: float = DEFAULT_RADIUS,
        initial_step: float = 0.12,
        depth_input: bool = False,
    ):
        if steps < 1:
            raise ValueError("marcher needs at least one step")
        self.steps = steps
        self.hidden = hidden
        self.near = camera_radius - 1.2
        self.far = camera_radius + 1.2
        if self.near <= 0:
            raise ValueError("initial depth must be positive")
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0  # forget gate
        self.params = {
            "w_x": DiffValue(_linear_init(rng, features, 4 * hidden, 1.0), True, "march.w_x"),
            "w_h": DiffValue(_linear_init(rng, hidden, 4 * hidden, 1.0), True, "march.w_h"),
            "b": DiffValue(bias, True, "march.b"),
            "w_step": DiffValue(rng.normal(0.0, 1e-3, size=(hidden, 1)), True, "march.w_step"),
            # softplus^-1 of the initial step length
            "b_step": DiffValue([np.log(np.expm1(initial_step))], True, "march.b_step"),
        }
        self.depth_input = depth_input
        if depth_input:
            # depth enters the gates relative to the near plane
            self.params["w_d"] = DiffValue(rng.normal(0.0, 1.0, size=(1, 4 * hidden)), True, "march.w_d")

    def named_parameters(self) -> dict[str, DiffValue]:
        return {f"marcher.{k}": v for k, v in self.params.items()}

    def lstm_step(self, v, h, c, depth=None):
        p = self.params
        n = self.hidden
        gates = ad.matmul(v, p["w_x"])
        if self.depth_input:
            gates = ad.add(gates, ad.matmul(ad.add_bias(depth, np.array([-self.near])), p["w_d"]))
        if h is not None:
            gates = ad.add(gates, ad.matmul(h, p["w_h"]))
        gates = ad.add_bias(gates, p["b"])
        i = ad.sigmoid(ad.slice_cols(gates, 0, n))
        f = ad.sigmoid(ad.slice_cols(gates, n, 2 * n))
        g = ad.tanh(ad.slice_cols(gates, 2 * n, 3 * n))
        o = ad.sigmoid(ad.slice_cols(gates, 3 * n, 4 * n))
        c_new = ad.mul(i, g) if c is None else ad.add(ad.mul(f, c), ad.mul(i, g))
        h_new = ad.mul(o, ad.tanh(c_new))
        return h_new, c_new

    def step_length(self, h) -> DiffValue:
        return ad.softplus(ad.add_bias(ad.matmul(h, self.params["w_step"]), self.params["b_step"]))


@dataclass
class MarchResult:
    points: DiffValue  # [B, 3]
    depth: DiffValue  # [B, 1]
    features: DiffValue  # [B, n], queried at the final points
    depth_history: np.ndarray = field(repr=False)  # [S + 1, B]


def march(scene: SceneFunction, origins, dirs, marcher: Marcher) -> MarchResult:
    """March ``B`` rays for ``marcher.steps`` steps starting at the near depth.

    ``origins`` and ``dirs`` are constant ``[B, 3]`` arrays.  Zero LSTM state is
    represented by ``None`` so the first step skips the recurrent matmul.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n_rays = origins.shape[0]
    depth = DiffValue(np.full((n_rays, 1), marcher.near))
    history = [depth.data[:, 0].copy()]
    h = c = None
    for _ in range(marcher.steps):
        pts = ad.add(ad.scale_rows(dirs, depth), origins)
        v = scene_features(scene, pts)
        _check_finite(v.data)
        h, c = marcher.lstm_step(v, h, c, depth)
        depth = ad.add(depth, marcher.step_length(h))
        history.append(depth.data[:, 0].copy())
    depth = ad.minimum(depth, marcher.far)
    pts = ad.add(ad.scale_rows(dirs, depth), origins)
    v = scene_features(scene, pts)
    _check_finite(v.data)
    return MarchResult(pts, depth, v, np.stack(history))


def _check_finite(arr: np.ndarray) -> None:
    bad = ~np.isfinite(arr).all(axis=1)
    if bad.any():
        raise NonFiniteFeatureError(int(np.flatnonzero(bad)[0]))


class RGBHead:
    """4-layer MLP from features to colors; layer norm + ReLU on hidden layers, sigmoid output."""

    def __init__(self, features: int, hidden: int, rng: np.random.Generator, layers: int = 4):
        sizes = [features] + [hidden] * (layers - 1) + [3]
        self.params: dict[str, DiffValue] = {}
        self.n_layers = layers
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.params[f"w{i}"] = DiffValue(_linear_init(rng, a, b), True, f"rgb.w{i}")
            self.params[f"b{i}"] = DiffValue(np.zeros(b), True, f"rgb.b{i}")
            if i < layers - 1:
                self.params[f"g{i}"] = DiffValue(np.ones(b), True, f"rgb.g{i}")
                self.params[f"s{i}"] = DiffValue(np.zeros(b), True, f"rgb.s{i}")

    def named_parameters(self) -> dict[str, DiffValue]:
        return {f"rgb.{k}": v for k, v in self.params.items()}

    def __call__(self, v) -> DiffValue:
        p = self.params
        x = v
        for i in range(self.n_layers):
            x = ad.add_bias(ad.matmul(x, p[f"w{i}"]), p[f"b{i}"])
            if i < self.n_layers - 1:
                x = ad.relu(ad.layer_norm(x, p[f"g{i}"], p[f"s{i}"]))
        return ad.sigmoid(x)


class SegHead:
    """Linear classifier from features to class logits (``n*c + c`` parameters)."""

    def __init__(self, features: int, classes: int, rng: np.random.Generator | None = None, std: float = 0.0):
        w = np.zeros((features, classes)) if rng is None else rng.normal(0.0, std, size=(features, classes))
        self.params = {
            "w": DiffValue(w, True, "seg.w"),
            "b": DiffValue(np.zeros(classes), True, "seg.b"),
        }

    @property
    def classes(self) -> int:
        return self.params["b"].data.size

    def named_parameters(self) -> dict[str, DiffValue]:
        return {f"seg.{k}": v for k, v in self.params.items()}

    def __call__(self, v) -> DiffValue:
        return ad.add_bias(ad.matmul(v, self.params["w"]), self.params["b"])


@dataclass
class RenderOutput:
    rgb: np.ndarray  # [H, W, 3]
    logits: np.ndarray  # [H, W, c]
    depth: np.ndarray  # [H, W]
    points: np.ndarray  # [H, W, 3]
    features: np.ndarray = field(repr=False)  # [H, W, n]

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.logits, axis=-1).astype(np.uint8)


def render_rays(scene, origins, dirs, marcher, rgb_head, seg_head, chunk: int = 4096):
    """Untaped forward pass over flat ray arrays; returns a dict of flat arrays."""
    outs = {"rgb": [], "logits": [], "depth": [], "points": [], "features": []}
    for s in range(0, origins.shape[0], chunk):
        res = march(scene, origins[s:s + chunk], dirs[s:s + chunk], marcher)
        outs["rgb"].append(rgb_head(res.features).data)
        outs["logits"].append(seg_head(res.features).data)
        outs["depth"].append(res.depth.data[:, 0])
        outs["points"].append(res.points.data)
        outs["features"].append(res.features.data)
    return {k: np.concatenate(v, axis=0) for k, v in outs.items()}


def render(scene: SceneFunction, view: CameraView, marcher: Marcher, rgb_head: RGBHead, seg_head: SegHead) -> RenderOutput:
    origins, dirs = rays_for_view(view)
    h, w = view.height, view.width
    flat = render_rays(scene, origins.reshape(-1, 3), dirs.reshape(-1, 3), marcher, rgb_head, seg_head)
    return RenderOutput(
        rgb=flat["rgb"].reshape(h, w, 3),
        logits=flat["logits"].reshape(h, w, -1),
        depth=flat["depth"].reshape(h, w),
        points=flat["points"].reshape(h, w, 3),
        features=flat["features"].reshape(h, w, -1),
    )


@dataclass
class PointCloud:
    points: np.ndarray  # [N, 3]
    colors: np.ndarray  # [N, 3] in [0, 1]
    labels: np.ndarray  # [N] uint8
    source: np.ndarray  # [N, 3] (view index, row, col)

    def __len__(self) -> int:
        return self.points.shape[0]


def point_cloud(scene, views, marcher, rgb_head, seg_head, foreground=lambda labels: labels != 0) -> PointCloud:
    """Final march points of all foreground pixels over the given views."""
    pts, cols, labs, src = [], [], [], []
    for vi, view in enumerate(views):
        out = render(scene, view, marcher, rgb_head, seg_head)
        labels = out.labels
        rows, cols_idx = np.nonzero(foreground(labels))
        pts.append(out.points[rows, cols_idx])
        cols.append(out.rgb[rows, cols_idx])
        labs.append(labels[rows, cols_idx])
        src.append(np.stack([np.full(rows.size, vi), rows, cols_idx], axis=1))
    if not pts:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, np.uint8), np.zeros((0, 3), np.int64))
    return PointCloud(np.concatenate(pts), np.concatenate(cols), np.concatenate(labs), np.concatenate(src))
