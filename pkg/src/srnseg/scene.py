"""Latent-conditioned scene functions.

A :class:`Hypernetwork` turns a per-object latent code into the weights of a
small coordinate MLP (:class:`SceneFunction`) that maps world points to feature
vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue

LATENT_INIT_STD = 0.01


@dataclass(frozen=True)
class SceneDims:
    latent: int = 32  # k
    hidden: int = 32  # h, width of the scene MLP
    features: int = 32  # n
    layers: int = 4

    def layer_shapes(self) -> list[tuple[int, int]]:
        sizes = [3] + [self.hidden] * (self.layers - 1) + [self.features]
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def weight_count(self) -> int:
        """Total number of scene-function parameters ``l``."""
        return sum(i * o + o for i, o in self.layer_shapes())


def init_latent(dim: int, rng: np.random.Generator, std: float = LATENT_INIT_STD) -> DiffValue:
    return DiffValue(rng.normal(0.0, std, size=(1, dim)), requires_grad=True, name="z")


def interpolate_codes(z_a, z_b, alpha: float) -> np.ndarray:
    """Linear blend ``(1 - alpha) z_a + alpha z_b``; exact at both endpoints."""
    a = np.asarray(getattr(z_a, "data", z_a), dtype=np.float64)
    b = np.asarray(getattr(z_b, "data", z_b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"latent shapes differ: {a.shape} vs {b.shape}")
    if alpha == 0:
        return a.copy()
    if alpha == 1:
        return b.copy()
    return (1.0 - alpha) * a + alpha * b


class Hypernetwork:
    """One single-hidden-layer MLP head per scene-function layer.

    Each head maps ``z [1, k]`` to the flattened weights and bias of its layer.
    """

    def __init__(self, dims: SceneDims, rng: np.random.Generator):
        self.dims = dims
        k = dims.latent
        self.heads: list[dict[str, DiffValue]] = []
        for li, (fan_in, fan_out) in enumerate(dims.layer_shapes()):
            n_out = fan_in * fan_out + fan_out
            # the output bias holds a standard init of the generated layer, so a
            # near-zero code already yields a well-scaled scene MLP
            base_w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=fan_in * fan_out)
            head = {
                "w1": DiffValue(rng.normal(0.0, np.sqrt(2.0 / k), size=(k, k)), True, f"hn{li}.w1"),
                "b1": DiffValue(np.zeros(k), True, f"hn{li}.b1"),
                "w2": DiffValue(
                    rng.normal(0.0, np.sqrt(2.0 / k), size=(k, n_out)) / dims.hidden, True, f"hn{li}.w2"
                ),
                "b2": DiffValue(np.concatenate([base_w, np.zeros(fan_out)]), True, f"hn{li}.b2"),
            }
            self.heads.append(head)

    def named_parameters(self) -> dict[str, DiffValue]:
        return {f"hn.{i}.{key}": v for i, head in enumerate(self.heads) for key, v in head.items()}

    @property
    def output_count(self) -> int:
        return sum(h["b2"].data.size for h in self.heads)


class SceneFunction:
    """Generated coordinate MLP: ``[B, 3]`` points to ``[B, n]`` features.

    Hidden layers apply layer normalization (no affine) before the ReLU; the last
    layer is linear.
    """

    def __init__(self, layers: list[tuple[DiffValue, DiffValue]], ln_eps: float = 1e-5):
        self.layers = layers
        self.ln_eps = ln_eps

    @property
    def weight_vector(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.data.reshape(-1), b.data.reshape(-1)]) for w, b in self.layers])

    def __call__(self, points) -> DiffValue:
        return scene_features(self, points)


def generate_scene(hn: Hypernetwork, z) -> SceneFunction:
    z = ad.as_value(z)
    k = hn.dims.latent
    if z.data.size != k:
        raise ValueError(f"latent code has {z.data.size} entries, hypernetwork expects {k}")
    if z.shape != (1, k):
        z = ad.reshape(z, (1, k))
    layers = []
    for head, (fan_in, fan_out) in zip(hn.heads, hn.dims.layer_shapes()):
        hidden = ad.relu(ad.add_bias(ad.matmul(z, head["w1"]), head["b1"]))
        flat = ad.add_bias(ad.matmul(hidden, head["w2"]), head["b2"])
        nw = fan_in * fan_out
        w = ad.reshape(ad.slice_cols(flat, 0, nw), (fan_in, fan_out))
        b = ad.slice_cols(flat, nw, nw + fan_out)
        layers.append((w, b))
    return SceneFunction(layers)


def scene_features(scene: SceneFunction, points) -> DiffValue:
    x = ad.as_value(points)
    last = len(scene.layers) - 1
    for i, (w, b) in enumerate(scene.layers):
        x = ad.add_bias(ad.matmul(x, w), b)
        if i < last:
            x = ad.relu(ad.layer_norm(x, eps=scene.ln_eps))
    return x
