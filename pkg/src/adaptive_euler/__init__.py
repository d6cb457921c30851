"""Adaptive implicit and explicit-implicit timestepping for the 2D Euler
equations on multiresolution quadtree meshes, with timestep plans derived
from a conservative dual problem."""

from .controller import ControllerConfig, TimestepPlan, apply_strategy, equidistribute, uniform_plan
from .euler import GAMMA, InvalidStateError, char_decomp, roe_flux
from .forward import (CFLViolation, FlowProblem, SolverState, StepRejected, cfl_of,
                      explicit_step, implicit_step, run_forward)
from .geometry import AdaptiveMesh, Hierarchy, MeshError
from .scenario import ChannelConfig, PerturbationSpec, run_pipeline, steady_state

__all__ = [
    "AdaptiveMesh", "CFLViolation", "ChannelConfig", "ControllerConfig", "FlowProblem",
    "GAMMA", "Hierarchy", "InvalidStateError", "MeshError", "PerturbationSpec", "SolverState",
    "StepRejected", "TimestepPlan", "apply_strategy", "cfl_of", "char_decomp", "equidistribute",
    "explicit_step", "implicit_step", "roe_flux", "run_forward", "run_pipeline", "steady_state",
    "uniform_plan",
]
