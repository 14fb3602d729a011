"""End-to-end runs: coupling, optional reference, artifacts and comparisons."""

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from glic.coupling.engine import run, verify_balance
from glic.errors import CouplingAbortedError
from glic.harness.build import build_case
from glic.harness.reference import solve_reference

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_DIVERGED = 2

ACCELERATOR_CHOICES = ("constant", "aitken", "anderson", "broyden", "none")


@dataclass
class RunResult:
    case: object
    built: object
    record: object
    status: str
    exit_code: int
    reference: object = None
    accuracy: dict = field(default_factory=dict)
    balance: dict = None
    files: dict = field(default_factory=dict)

    @property
    def problem(self):
        return self.built.problem

    @property
    def converged(self):
        return self.exit_code == EXIT_OK

    def max_equivalent_plastic_strain(self):
        return max(float(m.state.equivalent.max(initial=0.0)) for m in self.problem.patches)

    def interface_displacement(self):
        g = self.problem.global_model
        return g.u[self.problem.maps.global_dofs].copy()


def configure(case, accelerator=None, inexact=None, strategy=None):
    """Apply command-line style overrides to a case.

    ``accelerator="none"`` means plain fixed-point iterations (constant
    relaxation with unit factor).
    """
    if accelerator == "none":
        case = case.with_accelerator("constant", 1.0)
    elif accelerator is not None:
        case = case.with_accelerator(accelerator)
    if inexact is not None:
        case = case.with_inexact(inexact)
    if strategy is not None:
        case = case.with_strategy(strategy)
    return case


def field_csv(model, path=None, state=None):
    """Node-indexed field export: id, coordinates, displacement, plastic strain."""
    ep = model.nodal_equivalent_plastic_strain(state)
    u = model.u.reshape(-1, 2)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", "x", "y", "ux", "uy", "equivalent_plastic_strain"])
    for n, (xy, uv, e) in enumerate(zip(model.mesh.nodes, u, ep)):
        w.writerow([n, repr(float(xy[0])), repr(float(xy[1])), repr(float(uv[0])),
                    repr(float(uv[1])), repr(float(e))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def _relative(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    den = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 0 else float(np.linalg.norm(a - b))


def accuracy_report(result, reference):
    """Relative errors of the coupled solution against the monolithic one."""
    maps = result.problem.maps
    ep_c = result.max_equivalent_plastic_strain()
    ep_r = reference.max_equivalent_plastic_strain
    return {
        "max_equivalent_plastic_strain": ep_c,
        "reference_max_equivalent_plastic_strain": ep_r,
        "max_equivalent_plastic_strain_rel_error": abs(ep_c - ep_r) / ep_r if ep_r > 0 else abs(ep_c),
        "interface_displacement_rel_error": _relative(
            result.interface_displacement(), reference.interface_displacement(maps.global_dofs)
        ),
    }


def run_case(case, accelerator=None, inexact=None, reference=False, out=None,
             strategy=None, one_way=False):
    """Run the coupling on a case and write artifacts to ``out`` when given.

    Returns a :class:`RunResult`; a coupling abort gives ``exit_code`` 2 and
    keeps the partial record.
    """
    case = configure(case, accelerator, inexact, strategy)
    built = build_case(case)
    problem = built.problem
    try:
        record = run(problem, one_way=one_way)
        status, code = "converged", EXIT_OK
    except CouplingAbortedError as exc:
        record = exc.record
        status, code = "diverged", EXIT_DIVERGED
        log.warning("%s: %s", case.name, exc)
    result = RunResult(case, built, record, status, code)
    if code == EXIT_OK and problem.last_exchange is not None:
        result.balance = verify_balance(problem)
    if reference and code == EXIT_OK:
        schedule = [(inc.t_start, inc.t_end) for inc in record.committed()]
        result.reference = solve_reference(built, schedule=schedule)
        result.accuracy = accuracy_report(result, result.reference)
    if out is not None:
        write_artifacts(result, out)
    return result


def write_artifacts(result, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = {"convergence": out / "convergence.csv", "summary": out / "summary.json"}
    result.record.to_csv(files["convergence"])
    acc = result.case.controls.accelerator
    extra = {
        "case": result.case.name,
        "accelerator": acc.kind,
        "omega": acc.omega,
        "strategy": result.case.strategy,
        "inexact": None if result.case.controls.inexact is None else {
            "alpha": result.case.controls.inexact.alpha,
            "mode": result.case.controls.inexact.mode,
        },
        "max_equivalent_plastic_strain": result.max_equivalent_plastic_strain(),
        "balance": result.balance,
        "accuracy": result.accuracy or None,
    }
    result.record.summary_json(files["summary"], extra)
    problem = result.problem
    files["fields_global"] = out / "fields_global.csv"
    field_csv(problem.global_model, files["fields_global"])
    for s, m in enumerate(problem.patches):
        key = f"fields_{m.name}"
        files[key] = out / f"{key}.csv"
        field_csv(m, files[key])
    if result.reference is not None:
        files["fields_reference"] = out / "fields_reference.csv"
        field_csv(result.reference.model, files["fields_reference"])
        files["accuracy"] = out / "accuracy.json"
        files["accuracy"].write_text(json.dumps(result.accuracy, indent=2, sort_keys=True) + "\n")
    result.files = {k: str(v) for k, v in files.items()}
    return result.files


def compare_accelerators(case, accelerators, out=None, inexact=None):
    """One run per accelerator; returns rows of totals (diverged runs marked)."""
    rows = []
    curves = io.StringIO()
    cw = csv.writer(curves, lineterminator="\n")
    cw.writerow(["accelerator", "step", "increment", "fraction", "gl_iterations",
                 "global_newton", "local_newton"])
    results = {}
    for kind in accelerators:
        sub = None if out is None else Path(out) / kind
        res = run_case(case, accelerator=kind, inexact=inexact, out=sub)
        results[kind] = res
        row = {"accelerator": kind, "status": res.status}
        row.update(res.record.totals())
        rows.append(row)
        for inc in res.record.committed():
            cw.writerow([kind, inc.step, inc.index, repr(inc.t_end), inc.gl_iterations,
                         inc.global_newton, inc.local_newton])
    table = io.StringIO()
    tw = csv.DictWriter(table, fieldnames=list(rows[0]) if rows else ["accelerator"],
                        lineterminator="\n")
    tw.writeheader()
    tw.writerows(rows)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "comparison.csv").write_text(table.getvalue())
        (Path(out) / "curves.csv").write_text(curves.getvalue())
    return rows, results
