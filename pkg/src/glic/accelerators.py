"""Fixed-point accelerators for ``p = H(p)`` on interface vectors.

Each call to :meth:`Accelerator.accelerate` receives the current iterate
``p_j`` and the Picard output ``p_tilde_j = H(p_j)`` and returns ``p_{j+1}``.
The residual is ``r_j = p_tilde_j - p_j``.

Kinds:

* ``constant``: ``p + omega * r``
* ``aitken``: dynamic relaxation factor from successive residuals
* ``anderson``: multi-secant step with the minimum-norm inverse Jacobian
* ``broyden``: multi-secant update of an explicit low-rank inverse Jacobian
  that persists across increments
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from glic.errors import DegenerateHistoryError, InvalidInputError

log = logging.getLogger(__name__)

KINDS = ("constant", "aitken", "anderson", "broyden")
OMEGA_MIN = 1e-4
OMEGA_MAX = 2.0


def aitken_omega(omega_prev, r_prev, r_curr, omega_min=OMEGA_MIN, omega_max=OMEGA_MAX):
    """Aitken dynamic relaxation factor.

    ``omega_j = -omega_{j-1} * r_{j-1}.(r_j - r_{j-1}) / |r_j - r_{j-1}|^2``,
    clamped to ``[omega_min, omega_max]``. In one dimension this is the secant
    method.
    """
    r_prev = np.asarray(r_prev, dtype=float)
    dr = np.asarray(r_curr, dtype=float) - r_prev
    denom = float(dr @ dr)
    if denom == 0.0:
        raise DegenerateHistoryError("residual did not change between iterations")
    omega = -omega_prev * float(r_prev @ dr) / denom
    return float(np.clip(omega, omega_min, omega_max))


@dataclass
class SecantHistory:
    """Secant pairs ``(dp_tilde, dr)`` stored oldest first.

    ``tags`` records the increment each column belongs to.
    """

    max_columns: int = None
    drop_tolerance: float = 1e-8
    W: list = field(default_factory=list)
    V: list = field(default_factory=list)
    tags: list = field(default_factory=list)

    def __len__(self):
        return len(self.V)

    def add(self, dw, dv, tag=0):
        self.W.append(np.array(dw, dtype=float))
        self.V.append(np.array(dv, dtype=float))
        self.tags.append(tag)
        if self.max_columns is not None:
            while len(self.V) > self.max_columns:
                self._drop(0)

    def _drop(self, i):
        del self.W[i], self.V[i], self.tags[i]

    def clear(self):
        self.W.clear()
        self.V.clear()
        self.tags.clear()

    def keep_tags(self, tags):
        for i in reversed(range(len(self.tags))):
            if self.tags[i] not in tags:
                self._drop(i)

    def matrices(self):
        return np.column_stack(self.W), np.column_stack(self.V)

    def filtered_qr(self):
        """QR of ``V`` after removing linearly dependent columns.

        Columns are factored newest first so that stale columns are the ones
        dropped. Dropped columns are removed from the history. Returns
        ``(W, V, Q, R)`` with the retained columns in newest-first order, or
        ``None`` if nothing is left. The oldest columns beyond the vector
        dimension are dropped first.
        """
        # at most n columns can be independent in n dimensions
        while self.V and len(self.V) > self.V[0].size:
            self._drop(0)
        while self.V:
            order = list(reversed(range(len(self.V))))
            V = np.column_stack([self.V[i] for i in order])
            Q, R = np.linalg.qr(V)
            diag = np.abs(np.diag(R))
            bad = np.nonzero(diag < self.drop_tolerance * diag.max())[0]
            if diag.max() == 0.0:
                bad = np.arange(len(diag))
            if bad.size == 0:
                W = np.column_stack([self.W[i] for i in order])
                return W, V, Q, R
            # the oldest column goes: it carries the stalest information and,
            # late in an increment, is also the one dwarfing the newest ones
            log.debug("secant columns nearly dependent, dropping the oldest")
            self._drop(0)
        return None


def anderson_step(history, r, p_tilde):
    """Anderson update ``p_tilde + W alpha`` with ``alpha = argmin |V alpha + r|``.

    Raises :class:`DegenerateHistoryError` when no independent column is left.
    """
    qr = history.filtered_qr()
    if qr is None:
        raise DegenerateHistoryError("all secant columns were filtered out")
    W, _V, Q, R = qr
    alpha = np.linalg.solve(R, -(Q.T @ r))
    return p_tilde + W @ alpha


class LowRankInverseJacobian:
    """``J^-1 = base * I + sum_k sigma_k left_k right_k^T``.

    ``left`` and ``right`` have orthonormal columns after compression.
    """

    def __init__(self, n, base, max_rank=50, truncation_tolerance=1e-14):
        self.n = n
        self.base = float(base)
        self.max_rank = max_rank
        self.truncation_tolerance = truncation_tolerance
        self.left = np.zeros((n, 0))
        self.right = np.zeros((n, 0))
        self.singular_values = np.zeros(0)

    @property
    def rank(self):
        return len(self.singular_values)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        out = self.base * x
        if self.rank:
            out = out + self.left @ (self.singular_values * (self.right.T @ x))
        return out

    def to_dense(self):
        return self.base * np.eye(self.n) + (self.left * self.singular_values) @ self.right.T

    def correction(self, W, V, Q, R):
        """Factors ``(A, B)`` with ``A B^T = (W - J V) R^-1 Q^T``."""
        JV = np.column_stack([self.apply(v) for v in V.T])
        A = np.linalg.solve(R.T, (W - JV).T).T
        return A, Q

    def apply_updated(self, x, A, B):
        return self.apply(x) + A @ (B.T @ x)

    def absorb(self, A, B):
        """Add ``A B^T`` and recompress; truncates when the rank exceeds ``max_rank``."""
        left = np.hstack([self.left * self.singular_values, A])
        right = np.hstack([self.right, B])
        if left.shape[1] == 0:
            return
        Ql, Rl = np.linalg.qr(left)
        Qr, Rr = np.linalg.qr(right)
        U, s, Vt = np.linalg.svd(Rl @ Rr.T)
        keep = s > self.truncation_tolerance * s[0] if s.size and s[0] > 0 else np.zeros(s.shape, bool)
        k = min(int(keep.sum()), self.max_rank)
        self.left = Ql @ U[:, :k]
        self.right = Qr @ Vt[:k].T
        self.singular_values = s[:k]


class Accelerator:
    """Mutable accelerator state (relaxation factor, secant data, inverse Jacobian).

    Parameters
    ----------
    kind : {"constant", "aitken", "anderson", "broyden"}
    omega : float
        Relaxation factor for ``constant``; seed for ``aitken``; first-step
        relaxation for ``anderson`` and ``broyden``.
    history_policy : "clear" or ("retain", k)
        What :meth:`begin_increment` keeps from earlier increments.
    """

    def __init__(
        self,
        kind="aitken",
        omega=0.1,
        max_columns=None,
        max_rank=50,
        drop_tolerance=1e-8,
        history_policy=("retain", 1),
        omega_min=OMEGA_MIN,
        omega_max=OMEGA_MAX,
    ):
        if kind not in KINDS:
            raise InvalidInputError(f"unknown accelerator kind {kind!r}")
        if not (np.isfinite(omega) and omega > 0):
            raise InvalidInputError("relaxation factor must be positive")
        self.kind = kind
        self.omega_initial = float(omega)
        self.omega = float(omega)
        self.omega_min = omega_min
        self.omega_max = omega_max
        self.max_rank = max_rank
        self.history_policy = _parse_policy(history_policy)
        self.history = SecantHistory(max_columns, drop_tolerance)
        self.jacobian = None
        self._pending = None
        self.n = None
        self.increment = 0
        self.iteration = 0
        self.previous_r = None
        self.previous_p_tilde = None
        self.events = []

    # -------------------------------------------------------------- lifecycle
    def begin_increment(self):
        """Start a new increment: apply the history policy, reset iteration data."""
        reset_for_increment(self, self.history_policy)

    def end_increment(self):
        """Commit the converged increment (Broyden folds its secant data into J)."""
        if self.kind == "broyden" and self._pending is not None:
            self.jacobian.absorb(*self._pending)
        self._pending = None
        self.increment += 1
        self.iteration = 0
        self.previous_r = None
        self.previous_p_tilde = None

    def abort_increment(self):
        """Forget everything learned so far after a failed increment.

        Secant columns, the Aitken factor and the Broyden inverse Jacobian
        go back to their initial values, so a cutback retries from a clean
        accelerator rather than from data that may have caused the failure.
        """
        self.history.clear()
        self.omega = self.omega_initial
        if self.kind == "broyden" and self.n is not None:
            self.jacobian = LowRankInverseJacobian(
                self.n, 1.0 - self.omega_initial, self.max_rank
            )
        self._pending = None
        self.iteration = 0
        self.previous_r = None
        self.previous_p_tilde = None
        self.events.append(f"increment {self.increment} aborted: accelerator reset")

    # ------------------------------------------------------------------- core
    def _check(self, p, p_tilde):
        p = np.asarray(p, dtype=float)
        p_tilde = np.asarray(p_tilde, dtype=float)
        if p.ndim != 1 or p.shape != p_tilde.shape:
            raise InvalidInputError("p and p_tilde must be 1-D vectors on the same layout")
        if self.n is None:
            self.n = p.size
            if self.kind == "broyden":
                # prior reproducing constant relaxation: p_tilde - (1 - w) r = p + w r
                self.jacobian = LowRankInverseJacobian(
                    self.n, 1.0 - self.omega_initial, self.max_rank
                )
        elif p.size != self.n:
            raise InvalidInputError(
                f"interface layout changed: got {p.size} DOFs, expected {self.n}"
            )
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(p_tilde))):
            raise InvalidInputError("non-finite interface vector")
        return p, p_tilde

    def accelerate(self, p, p_tilde):
        p, p_tilde = self._check(p, p_tilde)
        r = p_tilde - p
        first = self.previous_r is None
        if not first and self.kind in ("anderson", "broyden"):
            self.history.add(
                p_tilde - self.previous_p_tilde, r - self.previous_r, self.increment
            )

        if self.kind == "constant":
            p_next = p + self.omega * r
        elif self.kind == "aitken":
            if not first:
                self._update_omega(r)
            p_next = p + self.omega * r
        elif self.kind == "anderson":
            p_next = self._anderson(p, p_tilde, r, first)
        else:
            p_next = self._broyden(p_tilde, r)

        self.previous_r = r
        self.previous_p_tilde = p_tilde
        self.iteration += 1
        return p_next

    def _update_omega(self, r):
        try:
            self.omega = aitken_omega(
                self.omega, self.previous_r, r, self.omega_min, self.omega_max
            )
        except DegenerateHistoryError:
            self.events.append("aitken: zero residual change, keeping omega")

    def _anderson(self, p, p_tilde, r, first):
        if len(self.history) == 0:
            return p + self.omega_initial * r
        try:
            return anderson_step(self.history, r, p_tilde)
        except DegenerateHistoryError:
            self.events.append("anderson: history degenerate, relaxed step")
            if not first:
                self._update_omega(r)
            return p + self.omega * r

    def _broyden(self, p_tilde, r):
        self._pending = None
        if len(self.history):
            qr = self.history.filtered_qr()
            if qr is not None:
                W, V, Q, R = qr
                self._pending = self.jacobian.correction(W, V, Q, R)
            else:
                self.events.append("broyden: history degenerate, previous Jacobian kept")
        if self._pending is None:
            return p_tilde - self.jacobian.apply(r)
        return p_tilde - self.jacobian.apply_updated(r, *self._pending)

    def current_inverse_jacobian(self):
        """Dense inverse Jacobian used by the next Broyden step (testing aid)."""
        J = self.jacobian.to_dense()
        if self._pending is not None:
            A, B = self._pending
            J = J + A @ B.T
        return J


AcceleratorState = Accelerator


def _parse_policy(policy):
    if policy == "clear":
        return ("retain", 0)
    if isinstance(policy, (tuple, list)) and len(policy) == 2 and policy[0] == "retain":
        k = int(policy[1])
        if k < 0:
            raise InvalidInputError("retain count must be non-negative")
        return ("retain", k)
    raise InvalidInputError(f"unknown history policy {policy!r}")


def reset_for_increment(state, policy):
    """Prepare ``state`` for a new increment.

    ``"clear"`` (or ``("retain", 0)``) drops all secant columns and resets the
    Aitken factor; ``("retain", k)`` keeps the columns of the last ``k``
    completed increments. The Broyden inverse Jacobian always persists.
    """
    _, k = _parse_policy(policy)
    state.iteration = 0
    state.previous_r = None
    state.previous_p_tilde = None
    state._pending = None
    if state.kind == "broyden":
        state.history.clear()
        return
    if k == 0:
        state.history.clear()
        state.omega = state.omega_initial
        return
    keep = set(range(state.increment - k, state.increment))
    state.history.keep_tags(keep)


def accelerate(state, p_j, p_tilde_j):
    return state.accelerate(p_j, p_tilde_j)


def broyden_step(state, r_j, p_tilde_j):
    """Broyden update given ``r_j`` and ``p_tilde_j`` (state must be ``broyden``)."""
    if state.kind != "broyden":
        raise InvalidInputError("broyden_step needs a broyden accelerator")
    p_tilde_j = np.asarray(p_tilde_j, dtype=float)
    return state.accelerate(p_tilde_j - np.asarray(r_j, dtype=float), p_tilde_j)


def extrapolate(committed, t_new):
    """Initial guess for the next increment from committed ``(time, p)`` pairs.

    Linear in time through the last two entries, constant with a single one.
    """
    if not committed:
        raise InvalidInputError("extrapolation needs at least one committed value")
    t1, p1 = committed[-1]
    if len(committed) == 1:
        return np.array(p1, dtype=float)
    t0, p0 = committed[-2]
    if t1 == t0:
        return np.array(p1, dtype=float)
    return p1 + (p1 - p0) * (t_new - t1) / (t1 - t0)
