"""Global-local iterative coupling driver.

Each global-local (GL) iteration solves the unmodified global model under the
current corrective interface load ``p``, imposes its interface displacement on
every patch, measures the reaction imbalance ``r`` on the interface and hands
``(p, p + r)`` to the accelerator for the next ``p``.
"""

import logging

import numpy as np

from glic.accelerators import extrapolate
from glic.coupling.controls import CouplingControls, IncrementationPolicy
from glic.coupling.record import ConvergenceRecord, GLIteration, IncrementRecord
from glic.errors import CouplingAbortedError, InvalidInputError, NonConvergenceError

log = logging.getLogger(__name__)

EXPLICIT = "explicit_subdomain0"
WORKAROUND = "workaround_global_patches"
STRATEGIES = (EXPLICIT, WORKAROUND)


class CouplingProblem:
    """Global model, refined patches and everything needed to couple them.

    Parameters
    ----------
    global_model : FeModel
        Never modified except for the corrective load it receives.
    patches : list of FeModel
        Refined models whose ``interface_dofs`` follow the interface map.
    maps : InterfaceMap
    complement_elements : array
        Global elements outside every patch region.
    global_patches : list of FeModel, optional
        Global versions of the patch regions (needed by the workaround
        strategy).
    n_steps : int
        Number of load steps; load time runs from 0 to ``n_steps``.
    """

    def __init__(
        self,
        global_model,
        patches,
        maps,
        complement_elements,
        controls=None,
        policy=None,
        strategy=EXPLICIT,
        global_patches=None,
        n_steps=1,
    ):
        if strategy not in STRATEGIES:
            raise InvalidInputError(f"unknown complement strategy {strategy!r}")
        if len(patches) != len(maps.patches):
            raise InvalidInputError("one interface map entry per patch is required")
        for s, (model, pm) in enumerate(zip(patches, maps.patches)):
            if not np.array_equal(model.interface_dofs, pm.patch_dofs):
                raise InvalidInputError(f"patch {s + 1}: interface DOFs differ from the map")
        if strategy == WORKAROUND:
            if global_patches is None or len(global_patches) != len(patches):
                raise InvalidInputError("workaround strategy needs the global patch models")
            for s, (model, pm) in enumerate(zip(global_patches, maps.patches)):
                if not np.array_equal(model.interface_dofs, pm.global_patch_dofs):
                    raise InvalidInputError(f"global patch {s + 1}: interface DOFs differ")
        self.global_model = global_model
        self.patches = list(patches)
        self.maps = maps
        self.complement_elements = np.asarray(complement_elements, dtype=np.int64)
        self.controls = controls or CouplingControls()
        self.policy = policy or IncrementationPolicy()
        self.strategy = strategy
        self.global_patches = list(global_patches) if global_patches is not None else None
        self.n_steps = int(n_steps)

        self.p = np.zeros(maps.size)
        self.p_iter = self.p.copy()
        self.p_history = [(0.0, self.p.copy())]
        self.p_iterates = []  # corrective load used by every GL iteration
        self.accelerator = self.controls.accelerator.build()
        self.step_norms = []
        self.last_residual_norm = None
        self.last_exchange = None
        self._lambda_prev = {}

    @property
    def time(self):
        return self.global_model.time

    def models(self):
        out = [self.global_model] + self.patches
        if self.strategy == WORKAROUND:
            out += self.global_patches
        return out


# ---------------------------------------------------------------- exchanges
def global_solve(problem, t_range, p=None, residual_target=None):
    """Solve the global model under the corrective load; return its interface trace."""
    p = problem.p_iter if p is None else np.asarray(p, dtype=float)
    g = problem.global_model
    report = g.solve_increment(
        t_range,
        corrective_load=(problem.maps.global_dofs, p),
        residual_target=residual_target,
    )
    return g.trial_u[problem.maps.global_dofs].copy(), report


def local_solve(problem, s, u_gamma, t_range, residual_target=None, models=None):
    """Impose ``A^s^T u_gamma`` on patch ``s`` and return its interface reactions."""
    models = problem.patches if models is None else models
    model = models[s]
    report = model.solve_increment(
        t_range,
        imposed_interface_u=problem.maps.restrict(s, u_gamma),
        residual_target=residual_target,
    )
    return model.reactions(model.interface_dofs), report


def complement_reaction(problem):
    """Reaction of the complement zone on the interface at the global trial state."""
    g = problem.global_model
    gamma = problem.maps.global_dofs
    f_int = g.forces_on(gamma, problem.complement_elements)
    f_ext = g.external_force(g.trial_time)[gamma]
    return -(f_int + f_ext)


def assemble_residual(problem, lambda_locals, lambda_reference, p=None):
    """Interface imbalance.

    ``lambda_reference`` is the complement reaction (explicit strategy) or the
    list of global-patch reactions (workaround strategy).
    """
    maps = problem.maps
    if len(lambda_locals) != len(maps.patches):
        raise InvalidInputError("one local reaction vector per patch is required")
    if problem.strategy == EXPLICIT:
        lam0 = np.asarray(lambda_reference, dtype=float)
        if lam0.shape != (maps.size,):
            raise InvalidInputError("complement reaction does not match the interface layout")
        total = lam0.copy()
        for s, lam in enumerate(lambda_locals):
            maps.inject(s, lam, total)
        return -total
    p = problem.p_iter if p is None else np.asarray(p, dtype=float)
    if len(lambda_reference) != len(maps.patches):
        raise InvalidInputError("one global-patch reaction vector per patch is required")
    r = -p.copy()
    for s, (lam_g, lam_l) in enumerate(zip(lambda_reference, lambda_locals)):
        maps.inject(s, np.asarray(lam_g) - np.asarray(lam_l), r)
    return r


def update_corrective_load(problem, r):
    """Advance ``problem.p_iter`` with the configured accelerator."""
    p = problem.p_iter
    problem.p_iter = problem.accelerator.accelerate(p, p + r)
    return problem.p_iter


def gl_converged(controls, r, increment_norms, step_norms):
    """Absolute, increment-relative and step-relative interface criteria."""
    r = np.asarray(r, dtype=float)
    if r.size == 0 or np.max(np.abs(r)) <= controls.abs_tol:
        return True
    n = float(np.linalg.norm(r))
    if increment_norms and n <= controls.rel_inc_tol * max(increment_norms):
        return True
    if step_norms and n <= controls.rel_step_tol * max(step_norms):
        return True
    return False


# ---------------------------------------------------------- inexact control
def _targets(problem, driver):
    """Residual targets for (global, patches, global patches); None means tight."""
    n = len(problem.patches)
    inexact = problem.controls.inexact
    if inexact is None or driver is None:
        return None, [None] * n, [None] * n
    alpha = inexact.alpha
    if inexact.mode == "previous_residual":
        t = alpha * driver
        return t, [t] * n, [t] * n

    gamma = problem.maps.global_dofs
    g = problem.global_model

    def target_for(key, lam_of):
        prev = problem._lambda_prev.get(key)
        if prev is None:
            return None
        return lambda u, f_total: alpha * float(np.linalg.norm(lam_of(u, f_total) - prev))

    def lam0(u, _f_total):
        f_int, _, _ = g.evaluate(u, with_tangent=False, elements=problem.complement_elements)
        return -(f_int + g.external_force(problem._t_end))[gamma]

    def lam_patch(model):
        return lambda u, f_total: model.reactions_from(f_total, model.interface_dofs)

    tg = target_for("global", lam0)
    tp = [target_for(("patch", s), lam_patch(m)) for s, m in enumerate(problem.patches)]
    tgp = [None] * n
    if problem.strategy == WORKAROUND:
        tgp = [target_for(("gpatch", s), lam_patch(m)) for s, m in enumerate(problem.global_patches)]
    return tg, tp, tgp


# ---------------------------------------------------------------- increments
def run_increment(problem, t_range, step=0, index=0, first_of_step=False, one_way=False):
    """Run GL iterations on one increment; commit all models on convergence.

    Returns an :class:`IncrementRecord`; ``converged`` is False when the
    increment has to be cut back (models and accelerator are then restored).
    """
    t0, t1 = t_range
    ctl = problem.controls
    acc = problem.accelerator
    acc.begin_increment()
    problem._t_end = t1
    problem.p_iter = extrapolate(problem.p_history, t1)
    entry = IncrementRecord(step, index, t0, t1)
    step_norms_before = len(problem.step_norms)
    inc_norms = []
    driver = None if first_of_step else problem.last_residual_norm

    for j in range(ctl.max_gl_iterations):
        tg, tp, tgp = _targets(problem, driver)
        problem.p_iterates.append(problem.p_iter.copy())
        g_iters = 0
        p_iters = []
        phase = "global"
        try:
            u_gamma, rep = global_solve(problem, t_range, residual_target=tg)
            g_iters += rep.iterations
            lam0 = complement_reaction(problem)
            phase = "patch"
            lam_l = []
            for s in range(len(problem.patches)):
                lam, rep = local_solve(problem, s, u_gamma, t_range, tp[s])
                lam_l.append(lam)
                p_iters.append(rep.iterations)
            ref = lam0
            if problem.strategy == WORKAROUND:
                # global versions of the patches count as global work
                phase = "global_patch"
                ref = []
                for s in range(len(problem.patches)):
                    lam, rep = local_solve(
                        problem, s, u_gamma, t_range, tgp[s], problem.global_patches
                    )
                    ref.append(lam)
                    g_iters += rep.iterations
        except NonConvergenceError as exc:
            n = exc.report.iterations if exc.report is not None else 0
            if phase == "patch":
                p_iters.append(n)
            else:
                g_iters += n
            entry.iterations.append(GLIteration(float("nan"), float("nan"), g_iters, p_iters))
            entry.failure = str(exc)
            break

        r = assemble_residual(problem, lam_l, ref)
        norm = float(np.linalg.norm(r))
        norm_inf = float(np.max(np.abs(r))) if r.size else 0.0
        entry.iterations.append(GLIteration(norm, norm_inf, g_iters, p_iters))
        inc_norms.append(norm)
        problem.step_norms.append(norm)
        problem._lambda_prev["global"] = lam0
        for s, lam in enumerate(lam_l):
            problem._lambda_prev[("patch", s)] = lam
        if problem.strategy == WORKAROUND:
            for s, lam in enumerate(ref):
                problem._lambda_prev[("gpatch", s)] = lam

        if one_way or gl_converged(ctl, r, inc_norms, problem.step_norms):
            for m in problem.models():
                m.commit()
            problem.p = problem.p_iter.copy()
            problem.p_history.append((t1, problem.p.copy()))
            problem.last_residual_norm = norm
            problem.last_exchange = {
                "u_gamma": u_gamma,
                "lambda_complement": lam0,
                "lambda_locals": lam_l,
                "residual": r,
            }
            acc.end_increment()
            entry.converged = True
            return entry
        if not np.isfinite(norm) or norm > ctl.divergence_factor * max(inc_norms[0], ctl.abs_tol):
            entry.failure = "interface residual diverged"
            break
        driver = norm
        update_corrective_load(problem, r)
    else:
        entry.failure = f"no GL convergence in {ctl.max_gl_iterations} iterations"

    for m in problem.models():
        m.discard()
    del problem.step_norms[step_norms_before:]
    problem.p_iter = problem.p.copy()
    acc.abort_increment()
    return entry


def run_step(problem, step=0, record=None, one_way=False):
    """Advance load time from ``step`` to ``step + 1`` with adaptive increments."""
    pol = problem.policy
    record = record or ConvergenceRecord(len(problem.patches))
    t = float(step)
    t_stop = float(step + 1)
    size = pol.initial_fraction
    fast_streak = 0
    cutbacks = 0
    first = True
    index = len(record.increments)
    while t < t_stop - 1e-12:
        size = min(size, pol.max_fraction)
        t_end = t + size
        if t_end > t_stop - 1e-9 * size:
            t_end = t_stop
        entry = run_increment(problem, (t, t_end), step, index, first, one_way)
        index += 1
        record.increments.append(entry)
        if entry.converged:
            t = t_end
            first = False
            cutbacks = 0
            fast = entry.gl_iterations <= pol.fast_iteration_threshold
            fast_streak = fast_streak + 1 if fast else 0
            size = pol.next_size(size, fast_streak)
            log.info("step %d: t=%.6g after %d GL iterations", step, t, entry.gl_iterations)
        else:
            cutbacks += 1
            fast_streak = 0
            log.info("step %d: cutback %d at t=%.6g (%s)", step, cutbacks, t, entry.failure)
            if cutbacks > pol.max_cutbacks:
                record.status = "diverged"
                record.message = f"step {step}: {entry.failure} after {pol.max_cutbacks} cutbacks"
                raise CouplingAbortedError(record.message, record)
            size *= pol.cutback_factor
    return record


def run(problem, one_way=False):
    """Run every load step; raises CouplingAbortedError with the partial record."""
    record = ConvergenceRecord(len(problem.patches))
    for step in range(problem.n_steps):
        run_step(problem, step, record, one_way)
    record.status = "converged"
    return record


def verify_balance(problem):
    """Interface imbalance and displacement gap at the last committed state."""
    ex = problem.last_exchange
    if ex is None:
        raise InvalidInputError("verify_balance needs a committed increment")
    maps = problem.maps
    total = ex["lambda_complement"].copy()
    for s, lam in enumerate(ex["lambda_locals"]):
        maps.inject(s, lam, total)
    gap = 0.0
    u_g = problem.global_model.u[maps.global_dofs]
    for s, model in enumerate(problem.patches):
        u_l = model.u[model.interface_dofs]
        gap = max(gap, float(np.max(np.abs(u_l - maps.restrict(s, u_g)), initial=0.0)))
    return {
        "imbalance_inf": float(np.max(np.abs(total), initial=0.0)),
        "imbalance_norm": float(np.linalg.norm(total)),
        "displacement_gap": gap,
    }
