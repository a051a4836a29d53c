"""Desk-scale text-to-layout encoder-decoder in numpy with explicit gradients."""
from .config import ModelConfig
from .transformer import LayoutTransformer, Batch, make_batch
from .train import Adam, TrainingDiverged, train_step, greedy_generate
from .gradcheck import grad_check, grad_check_fn

__all__ = [
    "ModelConfig",
    "LayoutTransformer",
    "Batch",
    "make_batch",
    "Adam",
    "TrainingDiverged",
    "train_step",
    "greedy_generate",
    "grad_check",
    "grad_check_fn",
]
