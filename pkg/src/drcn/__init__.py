"""Multiscale dilated residual denoising network in NumPy."""
from .data import NoiseSpec, add_gaussian_noise, read_image, write_image
from .checkpoint import load_checkpoint, save_checkpoint
from .hdc import hdc_max_gap, hdc_validate, receptive_field
from .metrics import psnr
from .model import Model, ModelConfig, build_model, count_params, denoise
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Model", "ModelConfig", "NoiseSpec", "TrainConfig", "add_gaussian_noise", "build_model",
    "count_params", "denoise", "evaluate", "hdc_max_gap", "hdc_validate", "load_checkpoint",
    "psnr", "read_image", "receptive_field", "save_checkpoint", "train", "write_image",
]
