"""Five-link biped walking by pendulum-model stepping, with orbit analysis."""

from .biped import (
    B_ACT,
    FomState,
    LinkParams,
    ModelError,
    RobotModel,
    bias_vector,
    default_model,
    energies,
    fk,
    forward_dynamics,
    mass_matrix,
)

__all__ = [
    "B_ACT",
    "FomState",
    "LinkParams",
    "ModelError",
    "RobotModel",
    "bias_vector",
    "default_model",
    "energies",
    "fk",
    "forward_dynamics",
    "mass_matrix",
]
