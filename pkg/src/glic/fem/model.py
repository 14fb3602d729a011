"""Plane-stress finite-element model with an incremental Newton-Raphson solver.

Sign convention: ``f_int(u)`` is the internal force vector, so equilibrium
reads ``f_int(u) + f_ext = 0`` and for linear elasticity ``f_int = -K u``.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from glic.errors import (
    InvalidInputError,
    NonConvergenceError,
    SingularSystemError,
    StateError,
)
from glic.fem.element import strain_displacement
from glic.fem.material import PlasticState, return_mapping

log = logging.getLogger(__name__)

LINEAR_RESIDUAL_RATIO = 1e-8
PIVOT_TOL = 1e-12  # relative; rigid-body modes leave pivots at round-off level
_NONZERO_FRACTION = 1e-10


@dataclass(frozen=True)
class NewtonControls:
    """Relative Newton tolerances.

    ``residual_ratio_tol`` bounds the largest residual over the average flux
    norm; ``correction_ratio_tol`` bounds the largest correction over the
    largest incremental displacement. The ``relaxed_*`` values cap how far an
    externally driven (inexact) target may loosen them.
    """

    residual_ratio_tol: float = 0.005
    correction_ratio_tol: float = 0.01
    max_iterations: int = 25
    relaxed_residual_ratio_tol: float = 1.0
    relaxed_correction_ratio_tol: float = 1.0

    def __post_init__(self):
        if self.residual_ratio_tol <= 0 or self.correction_ratio_tol <= 0:
            raise InvalidInputError("Newton tolerances must be positive")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be at least 1")

    @classmethod
    def relaxed(cls, max_iterations=25):
        return cls(1.0, 1.0, max_iterations)

    def effective(self, residual_target, flux):
        """Tolerances after applying an absolute residual target (force units)."""
        if residual_target is None:
            return self.residual_ratio_tol, self.correction_ratio_tol
        lo, hi = self.residual_ratio_tol, max(self.relaxed_residual_ratio_tol, self.residual_ratio_tol)
        ratio = residual_target / flux if flux > 0 else lo
        r_tol = float(np.clip(ratio, lo, hi))
        d_hi = max(self.relaxed_correction_ratio_tol, self.correction_ratio_tol)
        d_tol = float(np.clip(self.correction_ratio_tol * r_tol / lo, self.correction_ratio_tol, d_hi))
        return r_tol, d_tol


@dataclass
class SolveReport:
    iterations: int
    final_residual_ratio: float
    final_correction_ratio: float
    converged: bool
    residual_norm: float = 0.0
    flux_norm: float = 0.0
    residual_ratio_tol: float = 0.0
    correction_ratio_tol: float = 0.0
    hardening_extrapolated: bool = False


class DirichletBC:
    """Prescribed value of one DOF as a function of load time."""

    __slots__ = ("node", "component", "value")

    def __init__(self, node, component, value):
        self.node = int(node)
        self.component = int(component)
        self.value = value if callable(value) else (lambda t, v=float(value): v * t)

    @property
    def dof(self):
        return 2 * self.node + self.component


class FeModel:
    """One finite-element solver instance (global model, patch, or reference).

    Parameters
    ----------
    mesh : Mesh
    materials : dict
        Element-set name to :class:`Material`; the sets must partition the
        elements. A single Material applies to every element.
    thickness : float
    dirichlet : list of DirichletBC
    loads : list of (dof, callable(t) -> force)
    ties : list of (dependent_dof, [(master_dof, weight), ...])
        Linear multi-point constraints (hanging nodes on tied edges).
    interface_dofs : array of DOFs whose values are imposed at each solve.
    controls : NewtonControls
    """

    def __init__(
        self,
        mesh,
        materials,
        thickness=1.0,
        dirichlet=(),
        loads=(),
        ties=(),
        interface_dofs=(),
        controls=None,
        name="model",
    ):
        self.mesh = mesh
        self.name = name
        self.thickness = float(thickness)
        self.controls = controls or NewtonControls()
        self.dirichlet = list(dirichlet)
        self.loads = [(int(d), f) for d, f in loads]
        self.ties = [(int(d), [(int(m), float(w)) for m, w in ms]) for d, ms in ties]
        self.interface_dofs = np.asarray(interface_dofs, dtype=np.int64).ravel()

        self._materials_spec = materials
        self._setup_materials(materials)
        coords = mesh.nodes[mesh.elements]
        self._B, wdet = strain_displacement(coords)
        self._w = wdet * self.thickness
        self._edofs = np.empty((mesh.n_elements, 8), dtype=np.int64)
        self._edofs[:, 0::2] = 2 * mesh.elements
        self._edofs[:, 1::2] = 2 * mesh.elements + 1
        self._rows = np.repeat(self._edofs, 8, axis=1).ravel()
        self._cols = np.tile(self._edofs, (1, 8)).ravel()
        self._setup_dofs()

        n_gp = 4 * mesh.n_elements
        self.u = np.zeros(self.n_dofs)
        self.state = PlasticState.virgin(n_gp)
        self.time = 0.0
        self._trial = None
        self._elastic_cache = None

    # ------------------------------------------------------------------ setup
    def _setup_materials(self, materials):
        from glic.fem.material import Material

        ne = self.mesh.n_elements
        if isinstance(materials, Material):
            self.materials = [materials]
            self.material_index = np.zeros(ne, dtype=np.int64)
        else:
            self.materials = []
            self.material_index = np.full(ne, -1, dtype=np.int64)
            for set_name, mat in materials.items():
                if set_name not in self.mesh.element_sets:
                    raise InvalidInputError(f"unknown element set {set_name!r}")
                idx = np.asarray(self.mesh.element_sets[set_name], dtype=np.int64)
                if np.any(self.material_index[idx] >= 0):
                    raise InvalidInputError("element sets assigned to materials overlap")
                self.material_index[idx] = len(self.materials)
                self.materials.append(mat)
            if np.any(self.material_index < 0):
                raise InvalidInputError("some elements have no material")
        gp_mat = np.repeat(self.material_index, 4)
        self._groups = [np.nonzero(gp_mat == k)[0] for k in range(len(self.materials))]
        self.is_linear = not any(m.is_plastic for m in self.materials)

    def _setup_dofs(self):
        ndof = self.n_dofs
        dependent = np.array(sorted(d for d, _ in self.ties), dtype=np.int64)
        if len(set(dependent.tolist())) != len(dependent):
            raise InvalidInputError("a DOF is tied twice")
        is_dep = np.zeros(ndof, dtype=bool)
        is_dep[dependent] = True
        for _, masters in self.ties:
            for m, _w in masters:
                if not 0 <= m < ndof or is_dep[m]:
                    raise InvalidInputError("tie master must be an independent DOF")
        self.independent = np.nonzero(~is_dep)[0]
        pos = np.full(ndof, -1, dtype=np.int64)
        pos[self.independent] = np.arange(len(self.independent))
        self._ind_pos = pos

        presc = [bc.dof for bc in self.dirichlet] + self.interface_dofs.tolist()
        presc = np.asarray(presc, dtype=np.int64)
        if presc.size and (presc.min() < 0 or presc.max() >= ndof):
            raise InvalidInputError("prescribed DOF out of range")
        if len(np.unique(presc)) != len(presc):
            raise InvalidInputError("a DOF is prescribed twice")
        if presc.size and np.any(is_dep[presc]):
            raise InvalidInputError("prescribed DOF is also tied")
        for d, _f in self.loads:
            if not 0 <= d < ndof:
                raise InvalidInputError("load DOF out of range")
        self.prescribed = np.sort(presc)
        mask = np.zeros(ndof, dtype=bool)
        mask[self.prescribed] = True
        mask[dependent] = True
        self.free = np.nonzero(~mask)[0]
        self._free_ind = pos[self.free]
        self._presc_ind = pos[self.prescribed]

        if self.ties:
            rows, cols, vals = [], [], []
            rows += self.independent.tolist()
            cols += list(range(len(self.independent)))
            vals += [1.0] * len(self.independent)
            for d, masters in self.ties:
                for m, w in masters:
                    rows.append(d)
                    cols.append(pos[m])
                    vals.append(w)
            self._C = sp.csr_matrix(
                (vals, (rows, cols)), shape=(ndof, len(self.independent))
            )
        else:
            self._C = None

    # ------------------------------------------------------------- properties
    @property
    def n_dofs(self):
        return self.mesh.n_dofs

    @property
    def has_trial(self):
        return self._trial is not None

    def _expand(self, u_ind):
        if self._C is None:
            return u_ind.copy()
        return self._C @ u_ind

    def _reduce(self, v):
        if self._C is None:
            return v
        return self._C.T @ v

    def _reduce_matrix(self, K):
        if self._C is None:
            return K
        return (self._C.T @ K @ self._C).tocsr()

    def external_force(self, t):
        f = np.zeros(self.n_dofs)
        for d, fn in self.loads:
            f[d] += fn(t)
        return f

    # ---------------------------------------------------------------- physics
    def evaluate(self, u, with_tangent=True, elements=None):
        """Internal forces (and tangent) at ``u`` from the committed state.

        Returns ``(f_int, K, trial_state)``; ``K`` is ``-d f_int / d u``.
        """
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_dofs,):
            raise InvalidInputError(
                f"displacement vector has shape {u.shape}, expected ({self.n_dofs},)"
            )
        if not np.all(np.isfinite(u)):
            raise InvalidInputError("non-finite displacement vector")
        ue = u[self._edofs]
        eps = np.einsum("egij,ej->egi", self._B, ue).reshape(-1, 3)
        stress = np.empty_like(eps)
        D = np.empty((len(eps), 3, 3))
        trial = self.state.copy()
        for mat, idx in zip(self.materials, self._groups):
            sub = PlasticState(
                self.state.plastic_strain[idx],
                self.state.equivalent[idx],
                self.state.thickness_strain[idx],
                self.state.extrapolated[idx],
            )
            s, d, new = return_mapping(mat, eps[idx], sub)
            stress[idx] = s
            D[idx] = d
            trial.plastic_strain[idx] = new.plastic_strain
            trial.equivalent[idx] = new.equivalent
            trial.thickness_strain[idx] = new.thickness_strain
            trial.extrapolated[idx] = new.extrapolated
        ne = self.mesh.n_elements
        sig = stress.reshape(ne, 4, 3)
        fe = -np.einsum("egij,egi,eg->ej", self._B, sig, self._w)
        if elements is not None:
            mask = np.zeros(ne, dtype=bool)
            mask[elements] = True
            fe = fe * mask[:, None]
        f = np.bincount(self._edofs.ravel(), fe.ravel(), minlength=self.n_dofs)
        K = None
        if with_tangent:
            DB = np.einsum("egkl,eglj->egkj", D.reshape(ne, 4, 3, 3), self._B)
            Ke = np.einsum("egki,egkj,eg->eij", self._B, DB, self._w)
            if elements is not None:
                Ke = Ke * mask[:, None, None]
            K = sp.coo_matrix(
                (Ke.ravel(), (self._rows, self._cols)), shape=(self.n_dofs,) * 2
            ).tocsr()
        trial.stress = stress
        return f, K, trial

    # ----------------------------------------------------------------- solver
    def _factorize(self, K_ind):
        Kff = K_ind[self._free_ind][:, self._free_ind].tocsc()
        if Kff.shape[0] == 0:
            return None
        try:
            lu = spla.splu(Kff)
        except RuntimeError as exc:
            raise SingularSystemError(f"{self.name}: {exc}") from exc
        piv = np.abs(lu.U.diagonal())
        if piv.min() <= PIVOT_TOL * piv.max():
            raise SingularSystemError(
                f"{self.name}: reduced stiffness is singular (check the boundary conditions)"
            )
        return lu

    def _solve(self, lu, rhs):
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SingularSystemError(f"{self.name}: singular reduced stiffness")
        return x

    def solve_increment(
        self,
        t_range,
        imposed_interface_u=None,
        corrective_load=None,
        residual_target=None,
        controls=None,
    ):
        """Newton-Raphson solve of one increment from the committed state.

        Parameters
        ----------
        t_range : (float, float)
            Load time at the start (must equal the committed time) and end.
        imposed_interface_u : array, optional
            Values of ``interface_dofs`` at the end of the increment.
        corrective_load : (dofs, values), optional
            Extra nodal forces added to the external load.
        residual_target : float or callable(u, f_int + f_ext) -> float, optional
            Absolute residual level that may loosen the tolerances (bounded by
            the controls' default and relaxed values).

        The trial solution is kept until :meth:`commit` or the next solve.
        """
        t0, t1 = t_range
        if not np.isclose(t0, self.time, rtol=0, atol=1e-12):
            raise StateError(f"{self.name}: increment starts at {t0}, committed time is {self.time}")
        controls = controls or self.controls
        n_if = len(self.interface_dofs)
        if n_if:
            if imposed_interface_u is None:
                raise InvalidInputError(f"{self.name}: interface values required")
            imposed = np.asarray(imposed_interface_u, dtype=float)
            if imposed.shape != (n_if,):
                raise InvalidInputError(
                    f"{self.name}: imposed interface vector has length {imposed.shape}, expected {n_if}"
                )
            if not np.all(np.isfinite(imposed)):
                raise InvalidInputError("non-finite imposed interface displacement")
        elif imposed_interface_u is not None and len(imposed_interface_u):
            raise InvalidInputError(f"{self.name}: model declares no interface DOFs")

        f_ext = self.external_force(t1)
        if corrective_load is not None:
            dofs, vals = corrective_load
            np.add.at(f_ext, np.asarray(dofs, dtype=np.int64), np.asarray(vals, dtype=float))

        u_comm_ind = self.u[self.independent]
        u_ind = u_comm_ind.copy()
        presc_vals = {bc.dof: bc.value(t1) for bc in self.dirichlet}
        if n_if:
            presc_vals.update(zip(self.interface_dofs.tolist(), imposed.tolist()))
        # the prescribed increment enters the first iteration through the
        # tangent at the committed state (no material evaluation on a
        # configuration where only the boundary has moved)
        lift = np.zeros_like(u_ind)
        lift[self._presc_ind] = [presc_vals[d] for d in self.prescribed.tolist()]
        lift[self._presc_ind] -= u_ind[self._presc_ind]

        free = self._free_ind
        fluxes = []
        linear = self.is_linear
        report = None
        u = self._expand(u_ind)
        f_int, K, trial = self._evaluate_cached(u)
        fluxes.append(_flux(f_int))
        R = self._reduce(f_int + f_ext)
        if np.any(lift):
            R = R - self._reduced_tangent(K) @ lift
        lu = self._lu_for(K)
        for it in range(1, controls.max_iterations + 1):
            du = np.zeros_like(u_ind)
            if len(free):
                du[free] = self._solve(lu, R[free])
            if it == 1:
                u_ind = u_ind + lift
            u_ind = u_ind + du
            u = self._expand(u_ind)
            f_int, K, trial = self._evaluate_cached(u)
            fluxes.append(_flux(f_int))
            R = self._reduce(f_int + f_ext)
            flux = _mean_nonzero(fluxes)
            res = float(np.max(np.abs(R[free]))) if len(free) else 0.0
            res_ratio = res / flux if flux > 0 else (0.0 if res == 0 else np.inf)
            inc = float(np.max(np.abs(u_ind - u_comm_ind))) if len(u_ind) else 0.0
            corr = float(np.max(np.abs(du))) if len(du) else 0.0
            corr_ratio = corr / inc if inc > 0 else (0.0 if corr == 0 else np.inf)
            if callable(residual_target):
                target = residual_target(u, f_int + f_ext)
            else:
                target = residual_target
            r_tol, d_tol = controls.effective(target, flux)
            converged = res_ratio <= LINEAR_RESIDUAL_RATIO or (
                res_ratio <= r_tol and corr_ratio <= d_tol
            )
            report = SolveReport(
                it, res_ratio, corr_ratio, converged, res, flux, r_tol, d_tol,
                bool(trial.extrapolated.any()),
            )
            log.debug(
                "%s it %d: residual ratio %.3e (tol %.3e), correction ratio %.3e (tol %.3e)",
                self.name, it, res_ratio, r_tol, corr_ratio, d_tol,
            )
            if converged:
                break
            if not linear:
                lu = self._lu_for(K)
        self._trial = (t1, u, trial, f_int, f_ext)
        if not report.converged:
            raise NonConvergenceError(
                f"{self.name}: Newton did not converge in {controls.max_iterations} iterations",
                report,
            )
        return report

    def _evaluate_cached(self, u):
        if not self.is_linear:
            return self.evaluate(u)
        if self._elastic_cache is None:
            _, K, _ = self.evaluate(np.zeros(self.n_dofs))
            self._elastic_cache = {"K": K, "lu": None}
        K = self._elastic_cache["K"]
        f_int, _, trial = self.evaluate(u, with_tangent=False)
        return f_int, K, trial

    def _reduced_tangent(self, K):
        if self.is_linear:
            cache = self._elastic_cache
            if cache.get("K_ind") is None:
                cache["K_ind"] = self._reduce_matrix(K)
            return cache["K_ind"]
        return self._reduce_matrix(K)

    def _lu_for(self, K):
        if self.is_linear:
            cache = self._elastic_cache
            if cache["lu"] is None:
                cache["lu"] = self._factorize(self._reduce_matrix(K))
            return cache["lu"]
        return self._factorize(self._reduce_matrix(K))

    def commit(self):
        if self._trial is None:
            raise StateError(f"{self.name}: no trial solution to commit")
        t1, u, trial, _f_int, _f_ext = self._trial
        self.u = u.copy()
        self.state = trial
        self.time = t1
        self._trial = None

    def discard(self):
        self._trial = None

    # ---------------------------------------------------------- post-process
    @property
    def trial_u(self):
        if self._trial is None:
            raise StateError(f"{self.name}: no trial solution")
        return self._trial[1]

    @property
    def trial_state(self):
        if self._trial is None:
            raise StateError(f"{self.name}: no trial solution")
        return self._trial[2]

    def reactions(self, dofs):
        """``-(f_int + f_ext)`` gathered on independent DOFs ``dofs``."""
        if self._trial is None:
            raise StateError(f"{self.name}: reactions need a trial solution")
        dofs = np.asarray(dofs, dtype=np.int64).ravel()
        if dofs.size and (dofs.min() < 0 or dofs.max() >= self.n_dofs):
            raise InvalidInputError("reaction DOF does not exist")
        pos = self._ind_pos[dofs]
        if np.any(pos < 0):
            raise InvalidInputError("reaction requested on a tied (dependent) DOF")
        _, _, _, f_int, f_ext = self._trial
        return -self._reduce(f_int + f_ext)[pos]

    @property
    def trial_time(self):
        if self._trial is None:
            raise StateError(f"{self.name}: no trial solution")
        return self._trial[0]

    def reactions_from(self, f_total, dofs):
        """Reactions on ``dofs`` for a given ``f_int + f_ext`` vector."""
        return -self._reduce(f_total)[self._ind_pos[np.asarray(dofs, dtype=np.int64)]]

    def forces_on(self, dofs, elements):
        """Internal forces of an element subset at the trial state, on ``dofs``."""
        f, _, _ = self.evaluate(self.trial_u, with_tangent=False, elements=elements)
        return f[np.asarray(dofs, dtype=np.int64)]

    def nodal_equivalent_plastic_strain(self, state=None):
        state = state or self.state
        ep = state.equivalent.reshape(-1, 4).mean(axis=1)
        conn = self.mesh.elements
        acc = np.bincount(conn.ravel(), np.repeat(ep, 4), minlength=self.mesh.n_nodes)
        cnt = np.bincount(conn.ravel(), minlength=self.mesh.n_nodes)
        return np.divide(acc, cnt, out=np.zeros_like(acc), where=cnt > 0)

    def clone(self, **overrides):
        """Fresh copy sharing the mesh; state reset to virgin."""
        kw = dict(
            mesh=self.mesh,
            materials=self._materials_spec,
            thickness=self.thickness,
            dirichlet=self.dirichlet,
            loads=self.loads,
            ties=self.ties,
            interface_dofs=self.interface_dofs,
            controls=self.controls,
            name=self.name,
        )
        kw.update(overrides)
        return FeModel(**kw)


def _flux(f_int):
    a = np.abs(f_int)
    peak = a.max() if a.size else 0.0
    if peak == 0.0:
        return None
    return float(a[a > _NONZERO_FRACTION * peak].mean())


def _mean_nonzero(fluxes):
    vals = [f for f in fluxes if f is not None]
    return float(np.mean(vals)) if vals else 0.0


def assemble_internal_forces(model, u):
    """Internal force vector at ``u`` from the committed state."""
    return model.evaluate(u, with_tangent=False)[0]


def assemble_tangent(model, u):
    """Consistent tangent ``-d f_int / d u`` at ``u`` (sparse CSR)."""
    return model.evaluate(u)[1]


def solve_increment(model, imposed_interface_u, t_range, **kwargs):
    return model.solve_increment(t_range, imposed_interface_u=imposed_interface_u, **kwargs)


def extract_reactions(model, dofs):
    return model.reactions(dofs)


def commit_increment(model):
    model.commit()


def with_controls(controls, **changes):
    return replace(controls, **changes)
