"""memfem - nonlinear finite elements for solid and liquid membranes."""

from memfem.assembly import Assembler, assemble
from memfem.models import (
    BoundaryConditions,
    LoadCase,
    Mesh,
    NewtonSettings,
    Scenario,
    StepRecord,
    StepSchedule,
)
from memfem.scenarios import build_scenario, get_builtin
from memfem.simulator import MembraneSimulator, run
from memfem.solver import fd_tangent_audit, newton_step, run_schedule

__version__ = "0.1.0"
__all__ = [
    "Assembler",
    "BoundaryConditions",
    "LoadCase",
    "MembraneSimulator",
    "Mesh",
    "NewtonSettings",
    "Scenario",
    "StepRecord",
    "StepSchedule",
    "assemble",
    "build_scenario",
    "fd_tangent_audit",
    "get_builtin",
    "newton_step",
    "run",
    "run_schedule",
]
