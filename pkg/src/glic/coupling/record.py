"""Iteration bookkeeping and its CSV/JSON serialization."""

import csv
import io
import json
from dataclasses import dataclass, field

TOTAL_KEYS = ("N_G_inc", "N_G_iter", "N_L_inc", "N_L_iter", "N_GL")


@dataclass
class GLIteration:
    residual_norm: float
    residual_inf: float
    global_newton: int
    patch_newton: list


@dataclass
class IncrementRecord:
    step: int
    index: int
    t_start: float
    t_end: float
    iterations: list = field(default_factory=list)
    converged: bool = False
    failure: str = ""

    @property
    def gl_iterations(self):
        return len(self.iterations)

    @property
    def global_newton(self):
        return sum(it.global_newton for it in self.iterations)

    @property
    def local_newton(self):
        return sum(sum(it.patch_newton) for it in self.iterations)

    @property
    def final_residual(self):
        return self.iterations[-1].residual_norm if self.iterations else float("nan")


@dataclass
class ConvergenceRecord:
    n_patches: int
    increments: list = field(default_factory=list)
    status: str = "running"
    message: str = ""

    @property
    def converged(self):
        return self.status == "converged"

    def committed(self):
        return [inc for inc in self.increments if inc.converged]

    def totals(self):
        g_inc = sum(1 for inc in self.increments if inc.iterations)
        l_inc = sum(
            1 for inc in self.increments
            if any(len(it.patch_newton) == self.n_patches for it in inc.iterations)
        )
        return {
            "N_G_inc": g_inc,
            "N_G_iter": sum(inc.global_newton for inc in self.increments),
            "N_L_inc": l_inc,
            "N_L_iter": sum(inc.local_newton for inc in self.increments),
            "N_GL": sum(inc.gl_iterations for inc in self.increments),
        }

    def gl_per_increment(self):
        return [inc.gl_iterations for inc in self.committed()]

    def final_residual(self):
        for inc in reversed(self.increments):
            if inc.iterations:
                return inc.final_residual
        return float("nan")

    def to_csv(self, path=None):
        header = [
            "step", "increment", "t_start", "fraction", "gl_iter",
            "residual_norm", "residual_inf", "global_newton_iters",
        ] + [f"patch{s + 1}_newton_iters" for s in range(self.n_patches)] + ["increment_status"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for inc in self.increments:
            status = "converged" if inc.converged else "failed"
            for j, it in enumerate(inc.iterations):
                patches = list(it.patch_newton) + [""] * (self.n_patches - len(it.patch_newton))
                w.writerow(
                    [inc.step, inc.index, repr(inc.t_start), repr(inc.t_end), j,
                     repr(it.residual_norm), repr(it.residual_inf), it.global_newton]
                    + patches + [status]
                )
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def curves_csv(self, path=None):
        """Per committed increment: load time and iteration counts."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "increment", "fraction", "gl_iterations", "global_newton", "local_newton"])
        for inc in self.committed():
            w.writerow([inc.step, inc.index, repr(inc.t_end), inc.gl_iterations,
                        inc.global_newton, inc.local_newton])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary(self):
        return {
            "status": self.status,
            "message": self.message,
            "totals": self.totals(),
            "final_residual": self.final_residual(),
            "increments_committed": len(self.committed()),
        }

    def summary_json(self, path=None, extra=None):
        data = self.summary()
        if extra:
            data.update(extra)
        text = json.dumps(data, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text
