"""Scene representation networks with a linear segmentation renderer, in pure numpy."""

from .data import Dataset, LabeledObservation, generate_dataset, read_dataset, write_dataset
from .evaluation import miou, psnr, shape_miou
from .model import ModelConfig, SceneModel
from .training import LossWeights, TrainConfig, fit_seg_head, infer_latent, pretrain

__all__ = [
    "Dataset",
    "LabeledObservation",
    "LossWeights",
    "ModelConfig",
    "SceneModel",
    "TrainConfig",
    "fit_seg_head",
    "generate_dataset",
    "infer_latent",
    "miou",
    "pretrain",
    "psnr",
    "read_dataset",
    "shape_miou",
    "write_dataset",
]
