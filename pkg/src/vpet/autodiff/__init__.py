from . import nn
from .nn import (
    MLP,
    Conv1d,
    LayerNorm,
    Linear,
    Module,
    fourier_embed,
    kl_diag_gaussian,
    mlp_forward,
    reparameterize,
    time_embeddings,
)
from .optim import Adam, AdamState, adam_step
from .tensor import ShapeError, Tensor

__all__ = [
    "Adam",
    "AdamState",
    "Conv1d",
    "LayerNorm",
    "Linear",
    "MLP",
    "Module",
    "ShapeError",
    "Tensor",
    "adam_step",
    "fourier_embed",
    "kl_diag_gaussian",
    "mlp_forward",
    "nn",
    "reparameterize",
    "time_embeddings",
]
