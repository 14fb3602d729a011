"""Global-local iterative coupling of a coarse model with refined patches."""

from glic.coupling.controls import (
    AcceleratorConfig,
    CouplingControls,
    IncrementationPolicy,
    InexactControl,
)
from glic.coupling.engine import (
    EXPLICIT,
    STRATEGIES,
    WORKAROUND,
    CouplingProblem,
    assemble_residual,
    complement_reaction,
    gl_converged,
    global_solve,
    local_solve,
    run,
    run_increment,
    run_step,
    update_corrective_load,
    verify_balance,
)
from glic.coupling.interface import InterfaceMap, PatchMap
from glic.coupling.record import ConvergenceRecord, GLIteration, IncrementRecord

__all__ = [
    "AcceleratorConfig",
    "ConvergenceRecord",
    "CouplingControls",
    "CouplingProblem",
    "EXPLICIT",
    "GLIteration",
    "IncrementRecord",
    "IncrementationPolicy",
    "InexactControl",
    "InterfaceMap",
    "PatchMap",
    "STRATEGIES",
    "WORKAROUND",
    "assemble_residual",
    "complement_reaction",
    "gl_converged",
    "global_solve",
    "local_solve",
    "run",
    "run_increment",
    "run_step",
    "update_corrective_load",
    "verify_balance",
]
