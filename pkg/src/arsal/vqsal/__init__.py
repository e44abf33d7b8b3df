"""Desk-scale vector-quantized saliency networks.

The networks run on a small reverse-mode differentiation engine
(:mod:`arsal.vqsal.autodiff`) so stop-gradient handling is explicit and the
whole loss stack can be checked against finite differences.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .estimators import VQSal, VQSalAR
from .losses import VQLossWeights, gan_loss, perceptual_loss, saliency_loss, vq_loss
from .network import (
    ARFusionNet,
    Codebook,
    PatchDiscriminator,
    StopGradient,
    VisualTokens,
    VQConfig,
    VQNet,
    quantize,
)
from .training import SGD, gradient_check, train_ar, train_saliency, train_vq

__all__ = [
    "ARFusionNet",
    "Codebook",
    "PatchDiscriminator",
    "SGD",
    "StopGradient",
    "VQConfig",
    "VQLossWeights",
    "VQNet",
    "VQSal",
    "VQSalAR",
    "VisualTokens",
    "gan_loss",
    "gradient_check",
    "load_checkpoint",
    "perceptual_loss",
    "quantize",
    "saliency_loss",
    "save_checkpoint",
    "train_ar",
    "train_saliency",
    "train_vq",
    "vq_loss",
]
