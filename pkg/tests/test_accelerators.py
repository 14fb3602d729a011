"""Fixed-point accelerators: relaxation, Aitken, Anderson, multi-secant Broyden."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from glic.accelerators import (
    KINDS,
    Accelerator,
    LowRankInverseJacobian,
    SecantHistory,
    aitken_omega,
    anderson_step,
    broyden_step,
    extrapolate,
    reset_for_increment,
)
from glic.errors import DegenerateHistoryError, InvalidInputError


def affine_map(n, rng, rho=0.9):
    """``H(p) = A p + b`` with spectral radius ``rho`` and its fixed point."""
    A = rng.standard_normal((n, n))
    A *= rho / np.abs(np.linalg.eigvals(A)).max()
    b = rng.standard_normal(n)
    return (lambda p: A @ p + b), np.linalg.solve(np.eye(n) - A, b)


def iterate(acc, H, p0, n_iter):
    """Residual norms of ``n_iter`` accelerated iterations (before each update)."""
    p = p0
    norms = []
    for _ in range(n_iter):
        pt = H(p)
        norms.append(np.linalg.norm(pt - p))
        p = acc.accelerate(p, pt)
    return p, norms


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestConstantRelaxation:
    def test_half_step(self):
        acc = Accelerator("constant", omega=0.5)
        np.testing.assert_allclose(acc.accelerate(np.zeros(1), np.array([2.0])), [1.0])

    @pytest.mark.parametrize("kind", KINDS)
    def test_zero_residual_is_fixed_point(self, kind, rng):
        acc = Accelerator(kind, omega=0.3)
        H, _ = affine_map(4, rng)
        p, _ = iterate(acc, H, np.zeros(4), 3)
        np.testing.assert_array_equal(acc.accelerate(p, p.copy()), p)

    def test_invalid_construction(self):
        with pytest.raises(InvalidInputError):
            Accelerator("secant")
        with pytest.raises(InvalidInputError):
            Accelerator("constant", omega=0.0)
        with pytest.raises(InvalidInputError):
            Accelerator("constant", history_policy=("keep", 2))

    def test_layout_change_rejected(self):
        acc = Accelerator("aitken")
        acc.accelerate(np.zeros(3), np.ones(3))
        with pytest.raises(InvalidInputError):
            acc.accelerate(np.zeros(4), np.ones(4))
        with pytest.raises(InvalidInputError):
            acc.accelerate(np.zeros(3), np.ones(2))

    def test_non_finite_rejected(self):
        acc = Accelerator("anderson")
        with pytest.raises(InvalidInputError):
            acc.accelerate(np.zeros(2), np.array([1.0, np.inf]))


class TestAitken:
    def test_worked_example(self):
        assert aitken_omega(0.5, np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(0.25)

    def test_clamped(self):
        assert aitken_omega(0.5, np.array([1.0]), np.array([0.999])) == 2.0
        assert aitken_omega(0.5, np.array([1.0]), np.array([2.0])) == pytest.approx(1e-4)

    def test_degenerate(self):
        with pytest.raises(DegenerateHistoryError):
            aitken_omega(0.5, np.array([1.0, 2.0]), np.array([1.0, 2.0]))

    @pytest.mark.parametrize("k", [0.6, 0.9, 1.7])
    def test_secant_in_one_dimension(self, k):
        # r_j = (1 - k) r_{j-1}: H(p) = (1 - k) p + k p*, so the secant step is exact
        # (omega_1 = 1/k, inside the clamp for these k)
        p_star = 3.0
        H = lambda p: (1 - k) * p + k * p_star
        acc = Accelerator("aitken", omega=0.2)
        p, _ = iterate(acc, lambda p: np.array([H(p[0])]), np.array([0.0]), 2)
        assert p[0] == pytest.approx(p_star, rel=1e-12)

    def test_degenerate_keeps_omega(self):
        acc = Accelerator("aitken", omega=0.4)
        acc.accelerate(np.zeros(2), np.ones(2))
        acc.accelerate(np.full(2, 0.5), np.full(2, 1.5))
        assert acc.omega == 0.4
        assert any("aitken" in e for e in acc.events)

    def test_omega_persists_with_retained_history(self):
        acc = Accelerator("aitken", omega=0.1, history_policy=("retain", 1))
        acc.begin_increment()
        iterate(acc, lambda p: 0.5 * p + 1.0, np.zeros(2), 3)
        learned = acc.omega
        acc.end_increment()
        acc.begin_increment()
        assert acc.omega == learned != 0.1

    def test_clear_resets_omega(self):
        acc = Accelerator("aitken", omega=0.1, history_policy="clear")
        acc.begin_increment()
        iterate(acc, lambda p: 0.5 * p + 1.0, np.zeros(2), 3)
        acc.end_increment()
        acc.begin_increment()
        assert acc.omega == 0.1


class TestSecantHistory:
    def test_max_columns_drops_oldest(self):
        h = SecantHistory(max_columns=2)
        for k in range(3):
            h.add([k], [k + 1.0])
        np.testing.assert_array_equal(np.concatenate(h.W), [1.0, 2.0])

    def test_duplicate_column_filtered(self):
        h = SecantHistory()
        h.add([1.0, 0.0], [2.0, 0.0])
        h.add([1.0, 0.0], [2.0, 0.0])
        W, V, Q, R = h.filtered_qr()
        assert V.shape[1] == 1 and len(h) == 1

    def test_columns_capped_at_dimension(self, rng):
        h = SecantHistory()
        for _ in range(5):
            h.add(rng.standard_normal(3), rng.standard_normal(3))
        W, V, Q, R = h.filtered_qr()
        assert V.shape == (3, 3)

    def test_all_zero(self):
        h = SecantHistory()
        h.add([1.0], [0.0])
        assert h.filtered_qr() is None


class TestAndersonStep:
    def test_single_column(self):
        h = SecantHistory()
        h.add([1.0, 0.0], [2.0, 0.0])
        out = anderson_step(h, np.array([-4.0, 0.0]), np.zeros(2))
        np.testing.assert_allclose(out, [2.0, 0.0])  # alpha = 2

    def test_duplicated_column_same_as_single(self):
        single, double = SecantHistory(), SecantHistory()
        single.add([1.0, 0.5], [2.0, 1.0])
        for _ in range(2):
            double.add([1.0, 0.5], [2.0, 1.0])
        r, pt = np.array([-4.0, 3.0]), np.array([1.0, 1.0])
        np.testing.assert_allclose(anderson_step(double, r, pt), anderson_step(single, r, pt))

    def test_square_full_rank_exact(self, rng):
        for n in range(2, 8):
            h = SecantHistory()
            V = rng.standard_normal((n, n))
            for j in range(n):
                h.add(V[:, j], V[:, j])  # W = V, so the correction is V alpha
            r = rng.standard_normal(n)
            corr = anderson_step(h, r, np.zeros(n))
            assert np.linalg.norm(corr + r) <= 1e-12 * np.linalg.norm(r)

    def test_empty_history(self):
        with pytest.raises(DegenerateHistoryError):
            anderson_step(SecantHistory(), np.ones(2), np.ones(2))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(3, 8), st.integers(1, 3), st.integers(0, 2**32 - 1))
    def test_normal_equations(self, n, m, seed):
        rng = np.random.default_rng(seed)
        h = SecantHistory()
        V = rng.standard_normal((n, m))
        for j in range(m):
            h.add(V[:, j], V[:, j])
        r = rng.standard_normal(n)
        res = anderson_step(h, r, np.zeros(n)) + r  # V alpha + r
        scale = np.linalg.norm(V) * np.linalg.norm(r)
        assert np.abs(V.T @ res).max() <= 1e-10 * scale


class TestAnderson:
    def test_affine_three_dims(self, rng):
        H, p_star = affine_map(3, rng)
        acc = Accelerator("anderson", omega=0.1, history_policy="clear")
        acc.begin_increment()
        p0 = np.zeros(3)
        r0 = np.linalg.norm(H(p0) - p0)
        p, _ = iterate(acc, H, p0, 4)
        assert np.linalg.norm(H(p) - p) <= 1e-12 * r0
        np.testing.assert_allclose(p, p_star, rtol=1e-10)

    def test_first_iteration_relaxed(self):
        acc = Accelerator("anderson", omega=0.25)
        np.testing.assert_allclose(acc.accelerate(np.zeros(2), np.array([4.0, 0.0])), [1.0, 0.0])

    def test_degenerate_history_falls_back(self):
        acc = Accelerator("anderson", omega=0.5)
        acc.accelerate(np.zeros(1), np.array([1.0]))
        # same residual again: the secant column dv is zero
        out = acc.accelerate(np.array([0.5]), np.array([1.5]))
        assert np.isfinite(out).all()
        assert any("anderson" in e for e in acc.events)

    def test_retain_one_increment(self, rng):
        acc = Accelerator("anderson", omega=0.1, history_policy=("retain", 1))
        H, _ = affine_map(8, rng)
        for _ in range(2):
            acc.begin_increment()
            iterate(acc, H, np.zeros(8), 3)
            acc.end_increment()
        acc.begin_increment()
        assert len(acc.history) == 2

    @pytest.mark.parametrize("policy", ["clear", ("retain", 0)])
    def test_clear(self, policy):
        acc = Accelerator("anderson", omega=0.1, history_policy=policy)
        iterate(acc, lambda p: 0.5 * p + 1.0, np.zeros(3), 3)
        acc.end_increment()
        reset_for_increment(acc, policy)
        assert len(acc.history) == 0


class TestBroyden:
    def test_prior_reproduces_relaxation(self):
        acc = Accelerator("broyden", omega=0.3)
        out = acc.accelerate(np.zeros(2), np.array([1.0, -2.0]))
        np.testing.assert_allclose(out, [0.3, -0.6])

    def test_multi_secant_identity(self, rng):
        acc = Accelerator("broyden", omega=0.1)
        H, _ = affine_map(6, rng)
        iterate(acc, H, np.zeros(6), 4)
        W, V = acc.history.matrices()
        J = acc.current_inverse_jacobian()
        assert np.linalg.norm(J @ V - W) <= 1e-10 * np.linalg.norm(W)

    def test_affine_three_dims(self, rng):
        H, p_star = affine_map(3, rng)
        acc = Accelerator("broyden", omega=0.1)
        p, _ = iterate(acc, H, np.zeros(3), 5)
        np.testing.assert_allclose(p, p_star, rtol=1e-10, atol=1e-10)

    def test_truncation_inactive(self, rng):
        H, _ = affine_map(5, rng)
        outs = []
        for rank in (4, 1000):
            acc = Accelerator("broyden", omega=0.1, max_rank=rank)
            p, _ = iterate(acc, H, np.zeros(5), 4)
            outs.append(p)
        np.testing.assert_allclose(outs[0], outs[1], rtol=1e-12, atol=1e-12)

    def test_jacobian_persists_across_increments(self, rng):
        H, p_star = affine_map(4, rng)
        acc = Accelerator("broyden", omega=0.1)
        acc.begin_increment()
        iterate(acc, H, np.zeros(4), 6)
        acc.end_increment()
        assert acc.jacobian.rank > 0
        acc.begin_increment()
        assert len(acc.history) == 0 and acc.jacobian.rank > 0
        # the learned Jacobian solves the same affine problem in one step
        p = acc.accelerate(np.zeros(4), H(np.zeros(4)))
        assert np.linalg.norm(p - p_star) < 1e-6 * np.linalg.norm(p_star)

    def test_abort_resets(self, rng):
        H, _ = affine_map(4, rng)
        acc = Accelerator("broyden", omega=0.1)
        iterate(acc, H, np.zeros(4), 3)
        acc.end_increment()
        acc.abort_increment()
        assert acc.jacobian.rank == 0
        np.testing.assert_allclose(acc.current_inverse_jacobian(), 0.9 * np.eye(4))

    def test_broyden_step_wrapper(self):
        acc = Accelerator("broyden", omega=0.5)
        np.testing.assert_allclose(broyden_step(acc, np.array([2.0]), np.array([3.0])), [2.0])
        with pytest.raises(InvalidInputError):
            broyden_step(Accelerator("aitken"), np.ones(1), np.ones(1))


class TestLowRankInverseJacobian:
    def test_rank_truncation(self, rng):
        J = LowRankInverseJacobian(6, 0.5, max_rank=2)
        for _ in range(3):
            J.absorb(rng.standard_normal((6, 1)), rng.standard_normal((6, 1)))
        assert J.rank == 2

    def test_apply_matches_dense(self, rng):
        J = LowRankInverseJacobian(5, -0.2)
        J.absorb(rng.standard_normal((5, 2)), rng.standard_normal((5, 2)))
        x = rng.standard_normal(5)
        np.testing.assert_allclose(J.apply(x), J.to_dense() @ x, rtol=1e-13)


class TestExtrapolate:
    def test_constant_with_one_value(self):
        np.testing.assert_array_equal(extrapolate([(0.0, np.array([2.0]))], 0.5), [2.0])

    def test_linear(self):
        hist = [(0.0, np.array([0.0])), (0.5, np.array([1.0]))]
        np.testing.assert_allclose(extrapolate(hist, 0.75), [1.5])

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            extrapolate([], 1.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 4, elements=finite), st.sampled_from(KINDS))
def test_fixed_point_consistency(p, kind):
    acc = Accelerator(kind, omega=0.7)
    acc.accelerate(p + 1.0, p + 2.0)
    np.testing.assert_array_equal(acc.accelerate(p, p.copy()), p)
