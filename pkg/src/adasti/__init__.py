"""Spatio-temporal imputation with a conditional diffusion model.

The imputer pre-fills gaps with a bidirectional S4 network, extracts a
condition tensor with attention and graph convolution, and denoises target
entries with gated self/cross attention.
"""
from .config import ExperimentConfig, ModelConfig, load_config
from .model import AdaSTI

__all__ = ["AdaSTI", "ExperimentConfig", "ModelConfig", "load_config"]
__version__ = "0.1.0"
