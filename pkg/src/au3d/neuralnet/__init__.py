from .adam import AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Conv2D, Dense, Flatten, HeadDense, MaxPool2D, ReLU, Sigmoid, Softmax, col2im, im2col
from .losses import PROB_EPS, binary_cross_entropy, categorical_cross_entropy
from .network import (
    BINARY,
    THREE_CLASS,
    ArchitectureDescriptor,
    Network,
    clone_network,
    default_descriptor,
    init_network,
    parameter_shapes,
)

__all__ = [
    "AdamState", "adam_step", "load_checkpoint", "save_checkpoint",
    "Conv2D", "Dense", "Flatten", "HeadDense", "MaxPool2D", "ReLU", "Sigmoid", "Softmax", "im2col", "col2im",
    "PROB_EPS", "binary_cross_entropy", "categorical_cross_entropy",
    "BINARY", "THREE_CLASS", "ArchitectureDescriptor", "Network", "clone_network", "default_descriptor",
    "init_network", "parameter_shapes",
]
