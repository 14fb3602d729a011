"""Monolithic reference solution: complement and refined patches in one model."""

from dataclasses import dataclass, field

import numpy as np

from glic.errors import CouplingAbortedError, NonConvergenceError
from glic.harness.build import build_case, monolithic_model


@dataclass
class ReferenceSolution:
    model: object
    ref_of_global: dict
    increments: list = field(default_factory=list)  # (t0, t1, newton iterations)

    @property
    def max_equivalent_plastic_strain(self):
        return float(self.model.state.equivalent.max(initial=0.0))

    def displacement_at(self, global_nodes):
        """Displacements ``(n, 2)`` at global node ids on the complement side."""
        ids = np.array([self.ref_of_global[int(n)] for n in global_nodes], dtype=np.int64)
        return self.model.u.reshape(-1, 2)[ids]

    def interface_displacement(self, global_dofs):
        """Displacements at global interface DOFs (global DOF numbering)."""
        global_dofs = np.asarray(global_dofs, dtype=np.int64)
        u = self.displacement_at(global_dofs // 2)
        return u[np.arange(len(global_dofs)), global_dofs % 2]

    def interface_reactions(self, built):
        """Forces the patches exert on the complement over the interface."""
        gd = built.problem.maps.global_dofs
        ids = np.array([2 * self.ref_of_global[int(d // 2)] + d % 2 for d in gd])
        comp = self.model.mesh.element_sets["complement"]
        m = self.model
        f, _, _ = m.evaluate(m.u, with_tangent=False, elements=comp)
        return -(f + m.external_force(m.time))[ids]


def solve_reference(case_or_built, schedule=None):
    """Incremental Newton solve of the monolithic model.

    ``schedule`` is an optional list of ``(t0, t1)`` increments to replay
    (typically the committed increments of a coupled run, so that both follow
    the same loading path); otherwise the case's incrementation policy drives
    the increment size, using Newton iteration counts in place of GL counts.
    """
    built = case_or_built if hasattr(case_or_built, "problem") else build_case(case_or_built)
    case = built.case
    model, ref_of_global = monolithic_model(built)
    sol = ReferenceSolution(model, ref_of_global)

    if schedule is not None:
        for t0, t1 in schedule:
            try:
                rep = model.solve_increment((t0, t1))
            except NonConvergenceError as exc:
                raise CouplingAbortedError(
                    f"reference: Newton failed on replayed increment [{t0:g}, {t1:g}]: {exc}"
                ) from None
            model.commit()
            sol.increments.append((t0, t1, rep.iterations))
        return sol

    pol = case.policy
    for step in range(case.steps):
        t, t_stop = float(step), float(step + 1)
        size, streak, cutbacks = pol.initial_fraction, 0, 0
        while t < t_stop - 1e-12:
            size = min(size, pol.max_fraction)
            t_end = t_stop if t + size > t_stop - 1e-9 * size else t + size
            try:
                rep = model.solve_increment((t, t_end))
            except NonConvergenceError as exc:
                model.discard()
                cutbacks += 1
                if cutbacks > pol.max_cutbacks:
                    raise CouplingAbortedError(f"reference: {exc}") from None
                size *= pol.cutback_factor
                streak = 0
                continue
            model.commit()
            sol.increments.append((t, t_end, rep.iterations))
            t, cutbacks = t_end, 0
            streak = streak + 1 if rep.iterations <= pol.fast_iteration_threshold else 0
            size = pol.next_size(size, streak)
    return sol
