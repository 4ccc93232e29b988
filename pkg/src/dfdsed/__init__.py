"""Dilated frequency dynamic convolution (DFD) for sound event detection.

A small float64 autodiff core (:mod:`dfdsed.tensor`, :mod:`dfdsed.functional`)
carries the dynamic convolution layers (:mod:`dfdsed.layers`) and a CRNN
(:mod:`dfdsed.model`). Feature extraction, augmentation, intersection-based
scoring and the attention-variance analysis sit alongside.
"""

from .layers import DfdLayerConfig, attention_weights, dfd_forward, init_dfd_layer, layer_param_count
from .model import ModelConfig, build_crnn, crnn_forward, freq_dilations, model_param_count, train_step
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "DfdLayerConfig", "ModelConfig", "Tensor", "attention_weights", "build_crnn", "crnn_forward",
    "dfd_forward", "freq_dilations", "init_dfd_layer", "layer_param_count", "model_param_count",
    "no_grad", "train_step",
]
