"""Case files, model building, monolithic reference and end-to-end runs."""

from glic.harness.build import BuiltCase, build_case, monolithic_model
from glic.harness.case import Case, builtin_cases, load_case, parse_case
from glic.harness.reference import ReferenceSolution, solve_reference
from glic.harness.runner import (
    EXIT_DIVERGED,
    EXIT_INPUT,
    EXIT_OK,
    RunResult,
    compare_accelerators,
    run_case,
)

__all__ = [
    "BuiltCase",
    "Case",
    "EXIT_DIVERGED",
    "EXIT_INPUT",
    "EXIT_OK",
    "ReferenceSolution",
    "RunResult",
    "build_case",
    "builtin_cases",
    "compare_accelerators",
    "load_case",
    "monolithic_model",
    "parse_case",
    "run_case",
    "solve_reference",
]
