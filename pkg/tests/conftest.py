import numpy as np
import pytest

from glic.fem import DirichletBC, FeModel, Material, rectangular_grid
from glic.harness.case import parse_case

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}

STEEL = {"youngs_modulus": 210000.0, "poisson_ratio": 0.3}
TABLE1 = [[400.0, 0.0], [420.0, 0.02], [500.0, 0.2], [600.0, 0.5], [625.0, 0.6], [650.0, 0.8]]


def strip_model(n_elements, youngs=(1.0,), length=1.0, pull=0.01, name="strip"):
    """Row of unit-height elements behaving as a chain of springs.

    With zero Poisson ratio and every vertical displacement fixed, element
    ``e`` acts as a spring of stiffness ``E_e * h * t / L_e``.
    """
    mesh = rectangular_grid(0.0, 0.0, length * n_elements, 1.0, n_elements, 1)
    youngs = list(youngs) * (n_elements // len(youngs))
    sets = {f"e{e}": np.array([e]) for e in range(n_elements)}
    mesh.element_sets.update(sets)
    mats = {f"e{e}": Material(youngs[e], 0.0) for e in range(n_elements)}
    x = mesh.nodes[:, 0]
    bcs = [DirichletBC(n, 1, 0.0) for n in range(mesh.n_nodes)]
    bcs += [DirichletBC(n, 0, 0.0) for n in np.nonzero(x == 0.0)[0]]
    bcs += [DirichletBC(n, 0, pull) for n in np.nonzero(np.isclose(x, x.max()))[0]]
    return FeModel(mesh, mats, dirichlet=bcs, name=name)


def strip_case(kappa=2.0, k=1.0, pull=0.01, **extra):
    """Three-element bar; the middle element is a patch of modulus ``kappa``."""
    data = {
        "name": "strip",
        "materials": {
            "soft": {"youngs_modulus": k, "poisson_ratio": 0.0},
            "stiff": {"youngs_modulus": kappa, "poisson_ratio": 0.0},
        },
        "global": {"origin": [0.0, 0.0], "size": [3.0, 1.0], "elements": [3, 1], "material": "soft"},
        "patches": [{"name": "middle", "region": [1.0, 2.0, 0.0, 1.0], "refinement": 1,
                     "material": "stiff"}],
        "boundary_conditions": [
            {"nodes": {"x": 0.0}, "component": "x", "value": 0.0},
            {"nodes": {"box": [0.0, 3.0, 0.0, 1.0]}, "component": "y", "value": 0.0},
            {"nodes": {"x": 3.0}, "component": "x", "value": pull},
        ],
        "coupling": {"abs_tol": 1e-14, "rel_inc_tol": 1e-14, "rel_step_tol": 1e-14,
                     "max_gl_iterations": 100},
        "accelerator": {"kind": "aitken", "omega": 0.5},
        "incrementation": {"initial_fraction": 1.0, "max_fraction": 1.0},
    }
    data.update(extra)
    return parse_case(data)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        ok, detail = ACCEPTANCE.get(n, (False, "not reached"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def plate_model(plastic=True, nx=2, ny=2, pull=0.05):
    """Small clamped plate pulled at the top edge."""
    from glic.fem import Material

    mesh = rectangular_grid(0.0, 0.0, 10.0, 10.0, nx, ny)
    mat = Material(210000.0, 0.3, TABLE1 if plastic else None)
    y = mesh.nodes[:, 1]
    bcs = []
    for n in np.nonzero(y == 0.0)[0]:
        bcs += [DirichletBC(n, 0, 0.0), DirichletBC(n, 1, 0.0)]
    bcs += [DirichletBC(n, 1, pull) for n in np.nonzero(np.isclose(y, 10.0))[0]]
    return FeModel(mesh, mat, dirichlet=bcs, name="plate")


def fd_tangent_error(model, u, h=1e-7):
    """Max-norm relative error of the assembled tangent against central differences."""
    _, K, _ = model.evaluate(u)
    K = K.toarray()
    fd = np.empty_like(K)
    for j in range(model.n_dofs):
        e = np.zeros(model.n_dofs)
        e[j] = h
        fp, _, _ = model.evaluate(u + e, with_tangent=False)
        fm, _, _ = model.evaluate(u - e, with_tangent=False)
        fd[:, j] = -(fp - fm) / (2 * h)
    return np.abs(fd - K).max() / np.abs(K).max()


def uniaxial_oracle(total_strain, E=210000.0, table=TABLE1):
    """Stress and plastic strain of a uniaxial bar from the hardening table alone."""
    from scipy.optimize import brentq

    s, e = np.array(table, dtype=float).T
    sy = lambda ep: np.interp(ep, e, s) if ep <= e[-1] else s[-1] + (s[-1] - s[-2]) / (e[-1] - e[-2]) * (ep - e[-1])
    if total_strain * E <= s[0]:
        return total_strain * E, 0.0
    ep = brentq(lambda ep: ep + sy(ep) / E - total_strain, 0.0, total_strain, xtol=1e-16, rtol=1e-15)
    return sy(ep), ep
