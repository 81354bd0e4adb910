"""Bundle of all learned pieces plus checkpoint persistence."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import DiffValue
from .camera import DEFAULT_RADIUS, CameraView
from .renderer import Marcher, RenderOutput, RGBHead, SegHead, render
from .scene import Hypernetwork, SceneDims, SceneFunction, generate_scene, init_latent

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    latent: int = 32
    hidden: int = 32
    features: int = 32
    march_hidden: int = 32
    march_steps: int = 10
    march_depth_input: bool = False
    rgb_hidden: int = 32
    classes: int = 5
    camera_radius: float = DEFAULT_RADIUS
    seed: int = 0

    @property
    def scene_dims(self) -> SceneDims:
        return SceneDims(latent=self.latent, hidden=self.hidden, features=self.features)


class SceneModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.hypernet = Hypernetwork(config.scene_dims, rng)
        self.marcher = Marcher(config.features, config.march_hidden, rng, steps=config.march_steps,
                               camera_radius=config.camera_radius, depth_input=config.march_depth_input)
        self.rgb_head = RGBHead(config.features, config.rgb_hidden, rng)
        self.seg_head = SegHead(config.features, config.classes)
        self.codes: dict[str, DiffValue] = {}

    # -- parameters

    def backbone_parameters(self) -> dict[str, DiffValue]:
        """Hypernetwork, marcher and RGB head parameters (everything shared except the segmentation head)."""
        out = {}
        out.update(self.hypernet.named_parameters())
        out.update(self.marcher.named_parameters())
        out.update(self.rgb_head.named_parameters())
        return out

    def named_parameters(self) -> dict[str, DiffValue]:
        out = self.backbone_parameters()
        out.update(self.seg_head.named_parameters())
        out.update({f"code.{k}": v for k, v in self.codes.items()})
        return out

    def add_code(self, instance_id: str, rng: np.random.Generator) -> DiffValue:
        z = init_latent(self.config.latent, rng)
        z.name = f"code.{instance_id}"
        self.codes[instance_id] = z
        return z

    def code(self, key) -> DiffValue:
        if isinstance(key, DiffValue):
            return key
        if isinstance(key, str):
            try:
                return self.codes[key]
            except KeyError:
                raise KeyError(f"unknown instance id {key!r}") from None
        return DiffValue(np.asarray(key, dtype=np.float64).reshape(1, -1))

    def scene(self, code) -> SceneFunction:
        return generate_scene(self.hypernet, self.code(code))

    def render(self, code, view: CameraView) -> RenderOutput:
        return render(self.scene(code), view, self.marcher, self.rgb_head, self.seg_head)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    # -- persistence

    def save(self, path) -> None:
        meta = {"version": CHECKPOINT_VERSION, "config": asdict(self.config), "codes": sorted(self.codes)}
        arrays = {"__meta__": np.array(json.dumps(meta))}
        arrays.update({k: v.data for k, v in self.named_parameters().items()})
        path = os.fspath(path)
        d = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=d, suffix=".npz")
        os.close(fd)
        try:
            np.savez(tmp, **arrays)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise

    @classmethod
    def load(cls, path) -> "SceneModel":
        try:
            with np.load(path, allow_pickle=False) as npz:
                meta = json.loads(str(npz["__meta__"]))
                arrays = {k: npz[k] for k in npz.files if k != "__meta__"}
        except (OSError, KeyError, ValueError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint {path} has version {meta.get('version')}, expected {CHECKPOINT_VERSION}"
            )
        model = cls(ModelConfig(**meta["config"]))
        rng = np.random.default_rng(0)
        for cid in meta["codes"]:
            model.add_code(cid, rng)
        params = model.named_parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise CheckpointError(f"checkpoint {path} lacks {sorted(missing)[:3]}")
        for k, v in params.items():
            if arrays[k].shape != v.data.shape:
                raise CheckpointError(f"{k}: shape {arrays[k].shape} != {v.data.shape}")
            v.data[...] = arrays[k]
        return model
