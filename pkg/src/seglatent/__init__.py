"""Segment-aware and latent-syntax graph learning for aspect sentiment, at desk scale."""
from .model import Config, Model, load_config
from .train import evaluate, load_checkpoint, save_checkpoint, train

__all__ = ["Config", "Model", "evaluate", "load_checkpoint", "load_config", "save_checkpoint", "train"]
__version__ = "0.1.0"
