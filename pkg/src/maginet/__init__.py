"""Facial intrinsic decomposition on a small numpy autodiff engine."""

from .model import ModelConfig, init_maginet, maginet_forward
from .synthetic import IntrinsicStack, generate
from .tensor import Tensor, backward, no_grad
from .trainer import Pipeline, TrainConfig
from .translator import TranslatorConfig

__all__ = [
    "IntrinsicStack",
    "ModelConfig",
    "Pipeline",
    "Tensor",
    "TrainConfig",
    "TranslatorConfig",
    "backward",
    "generate",
    "init_maginet",
    "maginet_forward",
    "no_grad",
]
__version__ = "0.1.0"
