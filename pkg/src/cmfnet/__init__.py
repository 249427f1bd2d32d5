"""Cascaded multiscale fusion network for pansharpening, with data synthesis,
metrics, baselines and a reproducible training harness."""

from .core import CmfnetError, DataError, RasterTile, SamplePair
from .model import CMFNet, ModelConfig, forward
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = ["CMFNet", "CmfnetError", "DataError", "ModelConfig", "RasterTile", "SamplePair",
           "TrainConfig", "forward", "train", "__version__"]
