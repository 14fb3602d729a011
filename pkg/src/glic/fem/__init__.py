"""Small-strain plane-stress finite elements with J2 plasticity."""

from glic.fem.material import HardeningCurve, Material, PlasticState, return_mapping
from glic.fem.mesh import Mesh, rectangular_grid, remove_disk
from glic.fem.model import (
    DirichletBC,
    FeModel,
    NewtonControls,
    SolveReport,
    assemble_internal_forces,
    assemble_tangent,
    commit_increment,
    extract_reactions,
    solve_increment,
)

__all__ = [
    "DirichletBC",
    "FeModel",
    "HardeningCurve",
    "Material",
    "Mesh",
    "NewtonControls",
    "PlasticState",
    "SolveReport",
    "assemble_internal_forces",
    "assemble_tangent",
    "commit_increment",
    "extract_reactions",
    "rectangular_grid",
    "remove_disk",
    "return_mapping",
    "solve_increment",
]
