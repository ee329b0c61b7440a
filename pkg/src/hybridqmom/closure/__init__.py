"""Recurrent correction model for the CHyQMOM quadrature."""

from .model import ClosureModel, forward
from .objective import QuadratureObjective, hybrid_quadrature, loss, loss_weights
from .training import Adam, Hyperparams, gradient, train

__all__ = [
    "Adam",
    "ClosureModel",
    "Hyperparams",
    "QuadratureObjective",
    "forward",
    "gradient",
    "hybrid_quadrature",
    "loss",
    "loss_weights",
    "train",
]
