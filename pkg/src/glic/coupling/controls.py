"""Coupling tolerances, inexact-solver settings and increment-size policy."""

from dataclasses import dataclass, field

from glic.errors import InvalidInputError


@dataclass(frozen=True)
class AcceleratorConfig:
    kind: str = "aitken"
    omega: float = 0.1
    max_columns: int = None
    max_rank: int = 50
    drop_tolerance: float = 1e-8
    history: tuple = ("retain", 1)

    def build(self):
        from glic.accelerators import Accelerator

        return Accelerator(
            self.kind,
            omega=self.omega,
            max_columns=self.max_columns,
            max_rank=self.max_rank,
            drop_tolerance=self.drop_tolerance,
            history_policy=self.history,
        )


@dataclass(frozen=True)
class InexactControl:
    """Loosen inner Newton tolerances to ``alpha`` times an outer quantity.

    mode ``previous_residual`` uses the last interface residual norm;
    ``delta_lambda`` uses the change of the model's interface reaction.
    """

    alpha: float = 0.1
    mode: str = "previous_residual"

    def __post_init__(self):
        if not 0.0 < self.alpha <= 0.5:
            raise InvalidInputError("inexact alpha must lie in (0, 0.5]")
        if self.mode not in ("previous_residual", "delta_lambda"):
            raise InvalidInputError(f"unknown inexact mode {self.mode!r}")


@dataclass(frozen=True)
class CouplingControls:
    """Global-local convergence controls.

    ``abs_tol`` is in force units (infinity norm of the interface residual);
    the two relative tolerances compare the Euclidean norm with its maximum
    over the current increment and over the whole step.
    """

    accelerator: AcceleratorConfig = field(default_factory=AcceleratorConfig)
    abs_tol: float = 1e-3
    rel_inc_tol: float = 1e-3
    rel_step_tol: float = 1e-4
    max_gl_iterations: int = 50
    divergence_factor: float = 1e8
    inexact: InexactControl = None

    def __post_init__(self):
        if min(self.abs_tol, self.rel_inc_tol, self.rel_step_tol) <= 0:
            raise InvalidInputError("coupling tolerances must be positive")
        if self.max_gl_iterations < 1:
            raise InvalidInputError("max_gl_iterations must be at least 1")

    @property
    def omega(self):
        return self.accelerator.omega


@dataclass(frozen=True)
class IncrementationPolicy:
    initial_fraction: float = 1.0 / 50.0
    max_fraction: float = 1.0 / 10.0
    cutback_factor: float = 0.5
    growth_factor: float = 1.5
    fast_iteration_threshold: int = 6
    max_cutbacks: int = 5

    def __post_init__(self):
        if not 0.0 < self.initial_fraction <= self.max_fraction <= 1.0:
            raise InvalidInputError("need 0 < initial_fraction <= max_fraction <= 1")
        if not 0.0 < self.cutback_factor < 1.0 or self.growth_factor < 1.0:
            raise InvalidInputError("cutback factor must be in (0,1), growth >= 1")

    def next_size(self, size, fast_streak):
        """Increment size after a converged increment."""
        if fast_streak >= 2:
            size *= self.growth_factor
        return min(size, self.max_fraction)
