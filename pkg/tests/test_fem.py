"""Finite-element kernel: element, material update, assembly and Newton solver.

Oracles used here:
- constant-strain element integrated by hand
- central finite differences of the internal force vector
- uniaxial bar solved directly from the hardening table (scalar root find)
- spring chains for reactions
"""

import numpy as np
import pytest

from conftest import TABLE1, fd_tangent_error, plate_model, strip_model, uniaxial_oracle
from glic.errors import InvalidInputError, SingularSystemError, StateError
from glic.fem import (
    DirichletBC,
    FeModel,
    HardeningCurve,
    Material,
    Mesh,
    NewtonControls,
    PlasticState,
    assemble_internal_forces,
    assemble_tangent,
    commit_increment,
    extract_reactions,
    rectangular_grid,
    remove_disk,
    return_mapping,
)
from glic.fem.element import GAUSS_POINTS, shape_functions, strain_displacement

E = 210000.0
NU = 0.3
TIGHT = NewtonControls(1e-12, 1e-12, 50)


def uniaxial_strain(sigma, ep, E=E, nu=NU):
    """In-plane strain of a uniaxial stress state with plastic strain ``ep``."""
    return np.array([sigma / E + ep, -nu * sigma / E - 0.5 * ep, 0.0])


# ---------------------------------------------------------------------------
# Mesh and element
# ---------------------------------------------------------------------------

class TestMesh:
    def test_grid_counts(self):
        m = rectangular_grid(0.0, 0.0, 4.0, 2.0, 4, 2)
        assert m.n_nodes == 15
        assert m.n_elements == 8
        assert m.n_dofs == 30

    def test_counter_clockwise(self):
        m = rectangular_grid(0.0, 0.0, 1.0, 1.0, 1, 1)
        np.testing.assert_array_equal(m.nodes[m.elements[0]], [[0, 0], [1, 0], [1, 1], [0, 1]])

    def test_inverted_element_rejected(self):
        with pytest.raises(InvalidInputError, match="Jacobian"):
            Mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 3, 2, 1]])

    def test_missing_node_rejected(self):
        with pytest.raises(InvalidInputError):
            Mesh([[0, 0], [1, 0], [1, 1]], [[0, 1, 2, 3]])

    def test_remove_disk(self):
        m = rectangular_grid(0.0, 0.0, 4.0, 4.0, 4, 4)
        holed = remove_disk(m, (2.0, 2.0), 0.8)
        # the four elements around the centre have centroids at distance 0.707
        assert holed.n_elements == 12
        assert holed.n_nodes == 24

    def test_submesh_renumbers(self):
        m = rectangular_grid(0.0, 0.0, 2.0, 1.0, 2, 1)
        sub, used = m.submesh([1])
        assert sub.n_nodes == 4
        np.testing.assert_allclose(sub.nodes, m.nodes[used])


class TestElement:
    def test_partition_of_unity(self):
        for xi, eta in GAUSS_POINTS:
            assert shape_functions(xi, eta).sum() == pytest.approx(1.0)

    def test_constant_strain_reproduced(self, rng):
        coords = np.array([[[0.0, 0.0], [2.0, 0.2], [2.3, 1.9], [-0.1, 1.5]]])
        B, wdet = strain_displacement(coords)
        a, b, c = 1e-3, -2e-3, 5e-4
        u = np.column_stack([a * coords[0, :, 0] + c * coords[0, :, 1], b * coords[0, :, 1]]).ravel()
        eps = B[0] @ u
        np.testing.assert_allclose(eps, np.tile([a, b, c], (4, 1)), atol=1e-15)

    def test_weights_sum_to_area(self):
        coords = np.array([[[0.0, 0.0], [3.0, 0.0], [3.0, 2.0], [0.0, 2.0]]])
        _, wdet = strain_displacement(coords)
        assert wdet.sum() == pytest.approx(6.0)


# ---------------------------------------------------------------------------
# Material
# ---------------------------------------------------------------------------

class TestHardeningCurve:
    def test_anchor_points(self):
        h = HardeningCurve(TABLE1)
        assert h.initial_yield == 400.0
        assert h.yield_stress(0.02) == 420.0
        assert h.yield_stress(0.1) == pytest.approx(420 + 80 * 0.08 / 0.18, rel=1e-14)

    def test_single_point_is_perfectly_plastic(self):
        assert HardeningCurve([[400.0, 0.0]]).yield_stress(0.3) == 400.0

    def test_extrapolates_last_slope(self):
        h = HardeningCurve(TABLE1)
        assert h.yield_stress(1.0) == pytest.approx(650.0 + 125.0 * 0.2, rel=1e-14)

    @pytest.mark.parametrize("points", [
        [[400.0, 0.01], [420.0, 0.02]],
        [[400.0, 0.0], [390.0, 0.02]],
        [[400.0, 0.0], [420.0, 0.0]],
        [],
    ])
    def test_invalid_tables(self, points):
        with pytest.raises(InvalidInputError):
            HardeningCurve(points)


class TestMaterial:
    def test_invalid_constants(self):
        with pytest.raises(InvalidInputError):
            Material(-1.0, 0.3)
        with pytest.raises(InvalidInputError):
            Material(1.0, 0.5)

    def test_elastic_matrix(self):
        D = Material(E, NU).plane_stress_matrix()
        sig = D @ uniaxial_strain(100.0, 0.0)
        np.testing.assert_allclose(sig, [100.0, 0.0, 0.0], atol=1e-10)


class TestReturnMapping:
    mat = Material(E, NU, TABLE1)

    def _map(self, strain, state=None):
        state = state or PlasticState.virgin(1)
        s, D, new = return_mapping(self.mat, np.atleast_2d(strain), state)
        return s[0], D[0], new

    def test_below_yield_is_elastic(self):
        s, D, new = self._map(uniaxial_strain(399.0, 0.0))
        np.testing.assert_allclose(s, [399.0, 0.0, 0.0], atol=1e-9)
        assert new.equivalent[0] == 0.0
        np.testing.assert_allclose(D, self.mat.plane_stress_matrix())

    def test_anchor_400_at_zero(self):
        s, _, new = self._map(uniaxial_strain(400.0, 0.0))
        assert s[0] == pytest.approx(400.0, rel=1e-12)
        assert new.equivalent[0] == pytest.approx(0.0, abs=1e-15)

    def test_anchor_420_at_002(self):
        s, _, new = self._map(uniaxial_strain(420.0, 0.02))
        assert s[0] == pytest.approx(420.0, rel=1e-12)
        assert abs(s[1]) < 1e-9 and abs(s[2]) < 1e-9
        assert new.equivalent[0] == pytest.approx(0.02, rel=1e-12)

    def test_interpolated_point(self):
        sig = 420.0 + 80.0 * 0.08 / 0.18
        s, _, new = self._map(uniaxial_strain(sig, 0.1))
        assert s[0] == pytest.approx(sig, rel=1e-12)
        assert new.equivalent[0] == pytest.approx(0.1, rel=1e-12)

    @pytest.mark.parametrize("total", [0.0015, 0.003, 0.02, 0.15, 0.4])
    def test_matches_scalar_oracle(self, total):
        sig, ep = uniaxial_oracle(total)
        s, _, new = self._map(uniaxial_strain(sig, ep))
        assert s[0] == pytest.approx(sig, rel=1e-12)
        assert s[0] / E + new.equivalent[0] == pytest.approx(total, rel=1e-12)

    def test_stress_on_or_inside_surface(self, rng):
        strains = rng.normal(scale=0.01, size=(200, 3))
        s, _, new = return_mapping(self.mat, strains, PlasticState.virgin(200))
        q = np.sqrt(s[:, 0] ** 2 - s[:, 0] * s[:, 1] + s[:, 1] ** 2 + 3 * s[:, 2] ** 2)
        ys = np.array([self.mat.hardening_curve.yield_stress(e) for e in new.equivalent])
        assert np.all(q <= ys * (1 + 1e-10))

    def test_equivalent_plastic_strain_non_decreasing(self, rng):
        state = PlasticState.virgin(50)
        strains = np.zeros((50, 3))
        for _ in range(5):
            strains = strains + rng.normal(scale=0.003, size=(50, 3))
            _, _, new = return_mapping(self.mat, strains, state)
            assert np.all(new.equivalent >= state.equivalent)
            state = new

    def test_committed_state_untouched(self):
        state = PlasticState.virgin(1)
        self._map(uniaxial_strain(450.0, 0.05), state)
        assert state.equivalent[0] == 0.0

    def test_extrapolation_flagged(self):
        _, _, new = self._map(uniaxial_strain(700.0, 1.0))
        assert new.extrapolated[0]

    def test_tangent_matches_finite_differences(self, rng):
        for _ in range(10):
            strain = rng.normal(scale=0.006, size=3)
            _, D, _ = self._map(strain)
            h = 1e-9
            fd = np.empty((3, 3))
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                fd[:, j] = (self._map(strain + e)[0] - self._map(strain - e)[0]) / (2 * h)
            assert np.abs(fd - D).max() <= 1e-5 * np.abs(D).max()


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

class TestInternalForces:
    def test_zero_displacement(self):
        m = plate_model()
        np.testing.assert_array_equal(assemble_internal_forces(m, np.zeros(m.n_dofs)), 0.0)

    def test_constant_strain_unit_square(self):
        mesh = rectangular_grid(0.0, 0.0, 1.0, 1.0, 1, 1)
        m = FeModel(mesh, Material(1.0, 0.0))
        u = np.zeros(8)
        u[0::2] = 0.01 * mesh.nodes[:, 0]
        f = assemble_internal_forces(m, u).reshape(4, 2)
        # sigma_xx = 0.01 over unit edges: half the edge force at each node
        np.testing.assert_allclose(f[:, 0], [0.005, -0.005, 0.005, -0.005], atol=1e-16)
        np.testing.assert_allclose(f[:, 1], 0.0, atol=1e-16)

    def test_elastic_linearity(self, rng):
        m = plate_model(plastic=False, nx=3, ny=2)
        K0 = assemble_tangent(m, np.zeros(m.n_dofs))
        for _ in range(5):
            u = rng.normal(scale=0.1, size=m.n_dofs)
            f = assemble_internal_forces(m, u)
            ref = -(K0 @ u)
            assert np.abs(f - ref).max() <= 1e-12 * np.abs(ref).max()

    def test_non_finite_rejected(self):
        m = plate_model()
        u = np.zeros(m.n_dofs)
        u[3] = np.nan
        with pytest.raises(InvalidInputError):
            assemble_internal_forces(m, u)

    def test_wrong_size_rejected(self):
        m = plate_model()
        with pytest.raises(InvalidInputError):
            assemble_internal_forces(m, np.zeros(m.n_dofs + 1))


class TestTangent:
    def test_elastic_single_element_fd(self, rng):
        mesh = rectangular_grid(0.0, 0.0, 2.0, 1.0, 1, 1)
        m = FeModel(mesh, Material(E, NU))
        assert fd_tangent_error(m, rng.normal(scale=1e-3, size=8)) <= 1e-6

    def test_symmetry(self, rng):
        m = plate_model()
        K = assemble_tangent(m, rng.normal(scale=0.05, size=m.n_dofs)).toarray()
        assert np.abs(K - K.T).max() <= 1e-12 * np.abs(K).max()

    def test_plastic_fd(self, rng):
        m = plate_model(nx=2, ny=1)
        u = rng.normal(scale=0.05, size=m.n_dofs)
        _, _, trial = m.evaluate(u)
        assert trial.equivalent.max() > 0
        assert fd_tangent_error(m, u) <= 1e-5

    def test_singular_system(self):
        mesh = rectangular_grid(0.0, 0.0, 1.0, 1.0, 1, 1)
        m = FeModel(mesh, Material(E, NU), loads=[(4, lambda t: t)])
        with pytest.raises(SingularSystemError):
            m.solve_increment((0.0, 1.0))


# ---------------------------------------------------------------------------
# Newton solver
# ---------------------------------------------------------------------------

class TestSolveIncrement:
    def test_elastic_one_iteration(self):
        m = plate_model(plastic=False)
        rep = m.solve_increment((0.0, 1.0))
        assert rep.converged and rep.iterations == 1

    def test_uniaxial_element_matches_oracle(self):
        mesh = rectangular_grid(0.0, 0.0, 1.0, 1.0, 1, 1)
        # nodes 0, 2 on the left edge, 1, 3 on the right; lateral contraction free
        bcs = [DirichletBC(0, 0, 0.0), DirichletBC(0, 1, 0.0), DirichletBC(2, 0, 0.0),
               DirichletBC(1, 0, 0.01), DirichletBC(3, 0, 0.01)]
        m = FeModel(mesh, Material(E, NU, TABLE1), dirichlet=bcs, controls=TIGHT)
        for k in range(4):
            m.solve_increment((k / 4, (k + 1) / 4))
            m.commit()
        sig, ep = uniaxial_oracle(0.01)
        np.testing.assert_allclose(m.state.stress[:, 0], sig, rtol=1e-8)
        np.testing.assert_allclose(m.state.equivalent, ep, rtol=1e-8)

    def test_relaxed_controls_not_slower(self):
        default, relaxed = plate_model(), plate_model()
        relaxed.controls = NewtonControls.relaxed()
        n_default = default.solve_increment((0.0, 1.0)).iterations
        n_relaxed = relaxed.solve_increment((0.0, 1.0)).iterations
        assert n_relaxed <= n_default

    def test_time_mismatch(self):
        m = plate_model()
        with pytest.raises(StateError):
            m.solve_increment((0.5, 1.0))

    def test_imposed_interface(self):
        m = strip_model(2, pull=0.0)
        m.interface_dofs = np.array([2, 8])  # x at the middle nodes
        m = m.clone(interface_dofs=[2, 8])
        m.solve_increment((0.0, 1.0), imposed_interface_u=np.array([0.003, 0.003]))
        np.testing.assert_allclose(m.trial_u[[2, 8]], 0.003)

    def test_imposed_interface_size_checked(self):
        m = strip_model(2).clone(interface_dofs=[2, 8])
        with pytest.raises(InvalidInputError):
            m.solve_increment((0.0, 1.0), imposed_interface_u=np.zeros(3))


class TestReactions:
    def test_unloaded_zero(self):
        m = strip_model(2, pull=0.0).clone(interface_dofs=[2, 8])
        m.solve_increment((0.0, 1.0), imposed_interface_u=np.zeros(2))
        np.testing.assert_array_equal(extract_reactions(m, m.interface_dofs), 0.0)

    def test_two_spring_chain(self):
        # springs of stiffness k = E h t / L = 1 in series, end pulled by u
        u = 0.01
        m = strip_model(2, pull=u)
        m.solve_increment((0.0, 1.0))
        right = [4, 10]  # x DOFs of the pulled end
        assert extract_reactions(m, right).sum() == pytest.approx(u / 2, rel=1e-12)

    def test_global_equilibrium(self):
        mesh = rectangular_grid(0.0, 0.0, 10.0, 4.0, 5, 2)
        fixed = np.nonzero(mesh.nodes[:, 0] == 0.0)[0]
        bcs = [DirichletBC(n, c, 0.0) for n in fixed for c in (0, 1)]
        tip = np.nonzero(mesh.nodes[:, 0] == 10.0)[0]
        loads = [(2 * n + 1, lambda t: -100.0 * t) for n in tip]
        m = FeModel(mesh, Material(E, NU, TABLE1), dirichlet=bcs, loads=loads)
        rep = m.solve_increment((0.0, 1.0))
        presc = np.array([bc.dof for bc in bcs])
        reac = extract_reactions(m, presc).reshape(-1, 2).sum(axis=0)
        ext = m.external_force(1.0).reshape(-1, 2).sum(axis=0)
        # each free residual entry is bounded by the Newton residual tolerance
        n_free = m.n_dofs - len(presc)
        bound = n_free * rep.residual_ratio_tol * rep.flux_norm
        assert np.abs(reac + ext).max() <= bound

    def test_unknown_dof(self):
        m = strip_model(2)
        m.solve_increment((0.0, 1.0))
        with pytest.raises(InvalidInputError):
            extract_reactions(m, [999])

    def test_needs_trial(self):
        with pytest.raises(StateError):
            extract_reactions(strip_model(2), [0])


class TestCommit:
    def test_commit_without_trial(self):
        with pytest.raises(StateError):
            commit_increment(plate_model())

    def test_commit_copies_trial(self):
        m = plate_model(plastic=False)
        m.solve_increment((0.0, 1.0))
        trial = m.trial_u.copy()
        commit_increment(m)
        np.testing.assert_array_equal(m.u, trial)
        assert m.time == 1.0 and not m.has_trial

    def test_resolve_is_deterministic(self):
        m = plate_model()
        m.solve_increment((0.0, 0.5))
        first = m.trial_u.copy()
        m.solve_increment((0.0, 0.5))
        np.testing.assert_array_equal(m.trial_u, first)

    def test_monotone_plastic_strain(self):
        m = plate_model(pull=0.1)
        m.solve_increment((0.0, 0.5))
        m.commit()
        ep1 = m.state.equivalent.copy()
        assert ep1.max() > 0
        m.solve_increment((0.5, 1.0))
        m.commit()
        assert np.all(m.state.equivalent >= ep1)

    def test_discard_keeps_committed(self):
        m = plate_model()
        m.solve_increment((0.0, 0.5))
        m.discard()
        assert m.time == 0.0 and not m.has_trial
