"""Isotropic elasticity and J2 plasticity with tabulated isotropic hardening.

Internally tensors use Mandel notation ``[xx, yy, zz, sqrt(2)*xy]`` so that
inner products and norms are plain Euclidean ones. The plane-stress interface
uses Voigt vectors ``[xx, yy, xy]`` with engineering shear strain.
"""

from dataclasses import dataclass

import numpy as np

from glic.errors import InvalidInputError, NonConvergenceError

SQRT2 = np.sqrt(2.0)
SQRT32 = np.sqrt(1.5)
_M = np.array([1.0, 1.0, 1.0, 0.0])
_P_DEV = np.eye(4) - np.outer(_M, _M) / 3.0
_PLANE = [0, 1, 3]
_MANDEL_TO_VOIGT = np.array([1.0, 1.0, 1.0 / SQRT2])

OUT_OF_PLANE_TOL = 1e-10
MAX_THICKNESS_ITERATIONS = 50


class HardeningCurve:
    """Piecewise-linear yield stress versus equivalent plastic strain.

    Beyond the last tabulated point the last segment's slope is continued.
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        self.stresses = pts[:, 0].copy()
        self.strains = pts[:, 1].copy()
        if len(pts) == 0 or self.strains[0] != 0.0:
            raise InvalidInputError("hardening curve must start at zero plastic strain")
        if np.any(np.diff(self.strains) <= 0.0):
            raise InvalidInputError("hardening plastic strains must be strictly increasing")
        if np.any(np.diff(self.stresses) < 0.0) or self.stresses[0] <= 0.0:
            raise InvalidInputError("hardening stresses must be positive and non-decreasing")
        if len(pts) == 1:
            self.slopes = np.zeros(1)
        else:
            self.slopes = np.diff(self.stresses) / np.diff(self.strains)

    @property
    def initial_yield(self):
        return self.stresses[0]

    def _segment(self, ep):
        return np.clip(
            np.searchsorted(self.strains, ep, side="right") - 1, 0, len(self.slopes) - 1
        )

    def yield_stress(self, ep):
        ep = np.asarray(ep, dtype=float)
        k = self._segment(ep)
        return self.stresses[k] + self.slopes[k] * (ep - self.strains[k])

    def slope(self, ep):
        return self.slopes[self._segment(np.asarray(ep, dtype=float))]

    def as_list(self):
        return [[float(s), float(e)] for s, e in zip(self.stresses, self.strains)]

    def solve_radial_return(self, q_trial, ep_n, three_g):
        """Solve ``q_trial - 3G*dg - yield(ep_n + dg) = 0`` exactly, segment by segment.

        Returns ``(dg, slope_at_solution)``.
        """
        q_trial = np.asarray(q_trial, dtype=float)
        ep_n = np.asarray(ep_n, dtype=float)
        nseg = len(self.slopes)
        seg = self._segment(ep_n)
        dg = np.zeros_like(q_trial)
        H = np.zeros_like(q_trial)
        pending = np.ones(q_trial.shape, dtype=bool)
        ends = np.full(nseg, np.inf)
        ends[:-1] = self.strains[1:nseg]
        for _ in range(nseg):
            k = seg[pending]
            slope = self.slopes[k]
            trial = (
                q_trial[pending]
                - self.stresses[k]
                - slope * (ep_n[pending] - self.strains[k])
            ) / (three_g + slope)
            ok = ep_n[pending] + trial <= ends[k]
            idx = np.nonzero(pending)[0]
            dg[idx[ok]] = trial[ok]
            H[idx[ok]] = slope[ok]
            seg[idx[~ok]] += 1
            pending[idx[ok]] = False
            if not pending.any():
                break
        return dg, H


@dataclass
class Material:
    """Linear elastic material, optionally with J2 plasticity.

    ``hardening_curve`` is a list of ``(yield_stress, plastic_strain)`` pairs.
    """

    youngs_modulus: float
    poisson_ratio: float
    hardening_curve: object = None

    def __post_init__(self):
        if not self.youngs_modulus > 0.0:
            raise InvalidInputError("Young's modulus must be positive")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise InvalidInputError("Poisson ratio must lie in [0, 0.5)")
        if self.hardening_curve is not None and not isinstance(
            self.hardening_curve, HardeningCurve
        ):
            self.hardening_curve = HardeningCurve(self.hardening_curve)

    @property
    def is_plastic(self):
        return self.hardening_curve is not None

    @property
    def shear_modulus(self):
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def bulk_modulus(self):
        return self.youngs_modulus / (3.0 * (1.0 - 2.0 * self.poisson_ratio))

    def plane_stress_matrix(self):
        E, nu = self.youngs_modulus, self.poisson_ratio
        return E / (1.0 - nu**2) * np.array(
            [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]]
        )


@dataclass
class PlasticState:
    """Per-point internal variables.

    plastic_strain : (n, 4) Mandel components of the plastic strain tensor
    equivalent : (n,) accumulated equivalent plastic strain
    thickness_strain : (n,) total out-of-plane strain
    extrapolated : (n,) hardening curve evaluated past its last point
    """

    plastic_strain: np.ndarray
    equivalent: np.ndarray
    thickness_strain: np.ndarray
    extrapolated: np.ndarray

    @classmethod
    def virgin(cls, n):
        return cls(np.zeros((n, 4)), np.zeros(n), np.zeros(n), np.zeros(n, dtype=bool))

    def copy(self):
        return PlasticState(
            self.plastic_strain.copy(),
            self.equivalent.copy(),
            self.thickness_strain.copy(),
            self.extrapolated.copy(),
        )

    def plastic_strain_tensor(self):
        """Tensor components ``[xx, yy, zz, xy]``."""
        out = self.plastic_strain.copy()
        out[:, 3] /= SQRT2
        return out


def _return_3d(material, eps, ep_tensor, ep_bar):
    """Radial return for Mandel total strains; returns stress, tangent and updates."""
    G = material.shear_modulus
    K = material.bulk_modulus
    eps_e = eps - ep_tensor
    tr = eps_e[:, :3].sum(axis=1)
    dev = eps_e @ _P_DEV
    s_trial = 2.0 * G * dev
    norm_s = np.linalg.norm(s_trial, axis=1)
    q_trial = SQRT32 * norm_s
    n = len(eps)
    C = np.broadcast_to(K * np.outer(_M, _M) + 2.0 * G * _P_DEV, (n, 4, 4)).copy()
    stress = K * tr[:, None] * _M + s_trial
    dg = np.zeros(n)
    new_ep_tensor = ep_tensor.copy()
    curve = material.hardening_curve
    plastic = q_trial - curve.yield_stress(ep_bar) > 1e-12 * curve.initial_yield
    if plastic.any():
        qp = q_trial[plastic]
        dgp, H = curve.solve_radial_return(qp, ep_bar[plastic], 3.0 * G)
        normal = s_trial[plastic] / norm_s[plastic, None]
        scale = 1.0 - 3.0 * G * dgp / qp
        stress[plastic] = K * tr[plastic, None] * _M + scale[:, None] * s_trial[plastic]
        new_ep_tensor[plastic] += (SQRT32 * dgp)[:, None] * normal
        dg[plastic] = dgp
        coef = 6.0 * G**2 * (dgp / qp - 1.0 / (3.0 * G + H))
        C[plastic] = (
            K * np.outer(_M, _M)
            + 2.0 * G * scale[:, None, None] * _P_DEV
            + coef[:, None, None] * np.einsum("pi,pj->pij", normal, normal)
        )
    return stress, C, new_ep_tensor, ep_bar + dg


def _to_mandel(strain, ezz):
    return np.column_stack([strain[:, 0], strain[:, 1], ezz, strain[:, 2] / SQRT2])


def _condense(C):
    """Plane-stress tangent (Voigt) from a Mandel 4x4 tangent with sigma_zz = 0."""
    Cpp = C[:, _PLANE][:, :, _PLANE]
    c3 = C[:, _PLANE, 2]
    r3 = C[:, 2, _PLANE]
    D = Cpp - np.einsum("pi,pj->pij", c3, r3) / C[:, 2, 2][:, None, None]
    s = _MANDEL_TO_VOIGT
    return D * s[None, :, None] * s[None, None, :]


def return_mapping(material, strain, state):
    """Plane-stress stress update at a batch of material points.

    Parameters
    ----------
    material : Material
    strain : ndarray, shape (n, 3) or (3,)
        Total in-plane strain ``[exx, eyy, gxy]`` at the end of the increment.
        The committed ``state`` carries the history, so this is equivalent to
        passing the increment from the committed strain.
    state : PlasticState
        Committed internal variables (not modified).

    Returns
    -------
    stress : ndarray, shape (n, 3)
    tangent : ndarray, shape (n, 3, 3)
        Consistent plane-stress tangent.
    new_state : PlasticState
    """
    strain = np.asarray(strain, dtype=float)
    single = strain.ndim == 1
    strain = np.atleast_2d(strain)
    if not np.all(np.isfinite(strain)):
        raise InvalidInputError("non-finite strain passed to return_mapping")
    n = len(strain)
    E, nu = material.youngs_modulus, material.poisson_ratio

    ep = state.plastic_strain
    ep_bar = state.equivalent
    # elastic plane-stress predictor: sigma_zz = 0 for the elastic strain
    ee_xx = strain[:, 0] - ep[:, 0]
    ee_yy = strain[:, 1] - ep[:, 1]
    ezz = ep[:, 2] - nu / (1.0 - nu) * (ee_xx + ee_yy)

    if not material.is_plastic:
        D = np.broadcast_to(material.plane_stress_matrix(), (n, 3, 3)).copy()
        stress = strain @ material.plane_stress_matrix().T
        new = PlasticState(ep.copy(), ep_bar.copy(), ezz, state.extrapolated.copy())
        return _unbatch(stress, D, new, single)

    stress4, C, new_ep, new_bar = _return_3d(material, _to_mandel(strain, ezz), ep, ep_bar)
    plastic = new_bar > ep_bar
    if plastic.any():
        idx = np.nonzero(plastic)[0]
        ez = ezz[idx]
        tol = OUT_OF_PLANE_TOL * material.hardening_curve.initial_yield
        for _ in range(MAX_THICKNESS_ITERATIONS):
            s4, c4, e4, b4 = _return_3d(
                material, _to_mandel(strain[idx], ez), ep[idx], ep_bar[idx]
            )
            szz = s4[:, 2]
            if np.all(np.abs(szz) <= tol):
                break
            ez = ez - szz / c4[:, 2, 2]
        else:
            raise NonConvergenceError("plane-stress thickness iteration did not converge")
        stress4[idx], C[idx], new_ep[idx], new_bar[idx] = s4, c4, e4, b4
        ezz[idx] = ez
    stress = stress4[:, _PLANE] * _MANDEL_TO_VOIGT
    D = _condense(C)
    extrap = state.extrapolated | (new_bar > material.hardening_curve.strains[-1])
    new = PlasticState(new_ep, new_bar, ezz, extrap)
    return _unbatch(stress, D, new, single)


def _unbatch(stress, D, state, single):
    if single:
        return stress[0], D[0], state
    return stress, D, state
