"""Hybrid machine-learning / CHyQMOM moment closure for bubble populations."""

from .bubble import PhysParams, SteppersConfig, rk3_adaptive, rp_rhs
from .ensemble import EnsembleConfig, TrajectoryRecord, build_dataset, run_ensemble
from .forcing import ForcingSignal, eval_cp, sample_forcing, sample_forcings
from .integrator import IntegratorConfig, run as evolve
from .qbmm import MomentSet, Quadrature, chyqmom4_invert, project_moment, transport_rhs

__all__ = [
    "EnsembleConfig",
    "ForcingSignal",
    "IntegratorConfig",
    "MomentSet",
    "PhysParams",
    "Quadrature",
    "SteppersConfig",
    "TrajectoryRecord",
    "build_dataset",
    "chyqmom4_invert",
    "eval_cp",
    "evolve",
    "project_moment",
    "rk3_adaptive",
    "rp_rhs",
    "run_ensemble",
    "sample_forcing",
    "sample_forcings",
    "transport_rhs",
]
