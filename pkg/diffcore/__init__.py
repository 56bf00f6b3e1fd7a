# Differentiable tensor engine

from diffcore.tensor import Graph, NonScalarLossError, ShapeError, Tensor, backward, no_grad
from diffcore.ops import DegenerateDenominatorError
from diffcore.nn import MLP, ParameterSet, linear, mlp_forward
from diffcore.gradcheck import grad_check, grad_check_detail
from diffcore.optim import Adam, cosine_lr
from diffcore.checkpoint import CheckpointError, CheckpointStore, load_checkpoint, save_checkpoint

__all__ = [
    "Adam",
    "CheckpointError",
    "CheckpointStore",
    "DegenerateDenominatorError",
    "Graph",
    "MLP",
    "NonScalarLossError",
    "ParameterSet",
    "ShapeError",
    "Tensor",
    "backward",
    "cosine_lr",
    "grad_check",
    "grad_check_detail",
    "linear",
    "load_checkpoint",
    "mlp_forward",
    "no_grad",
    "save_checkpoint",
]
