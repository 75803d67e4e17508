from .autodiff import Tensor, backward, set_debug
from .checkpoint import load_checkpoint, save_checkpoint
from .model import Architecture, ConvLayer, ModelParams, NetworkModel, bilinear_upsample, forward
from .optim import AdamState, adam_step

__all__ = [
    "AdamState", "Architecture", "ConvLayer", "ModelParams", "NetworkModel", "Tensor",
    "adam_step", "backward", "bilinear_upsample", "forward", "load_checkpoint",
    "save_checkpoint", "set_debug",
]
