"""Dense linear-algebra oracle for the interface fixed-point iteration.

For linear models the GL sweep is affine in ``p``. Condensing each model onto
the interface gives the Schur complements ``S_G`` (whole global model),
``S_Gp`` (global version of the patches) and ``S_L`` (refined patches). The
complement contributes ``S_0 = S_G - S_Gp`` and one relaxed iteration maps an
error ``e`` to ``(I - w (S_0 + S_L) S_G^-1) e``.
"""

import numpy as np


def _dense_condensed(model, interface_dofs):
    """Schur complement of a linear model onto ``interface_dofs``.

    Boundary-prescribed DOFs are removed (homogeneous data); tied DOFs are
    eliminated through their linear constraint.
    """
    _, K, _ = model.evaluate(np.zeros(model.n_dofs))
    K = K.toarray()
    n = model.n_dofs
    tied = {d: ms for d, ms in model.ties}
    keep = [d for d in range(n) if d not in tied]
    col = {d: i for i, d in enumerate(keep)}
    C = np.zeros((n, len(keep)))
    for d in keep:
        C[d, col[d]] = 1.0
    for d, ms in tied.items():
        for m, w in ms:
            C[d, col[m]] += w
    Kr = C.T @ K @ C
    bc = {bc.dof for bc in model.dirichlet}
    gamma = [col[d] for d in interface_dofs]
    inner = [col[d] for d in keep if d not in bc and col[d] not in set(gamma)]
    Kgg = Kr[np.ix_(gamma, gamma)]
    if not inner:
        return Kgg
    Kgi = Kr[np.ix_(gamma, inner)]
    Kii = Kr[np.ix_(inner, inner)]
    return Kgg - Kgi @ np.linalg.solve(Kii, Kgi.T)


def interface_operators(problem):
    """``(S_G, S_Gp, S_L)`` assembled on the global interface layout."""
    maps = problem.maps
    S_G = _dense_condensed(problem.global_model, maps.global_dofs)
    n = maps.size
    S_Gp = np.zeros((n, n))
    S_L = np.zeros((n, n))
    for s, pm in enumerate(maps.patches):
        ix = np.ix_(pm.positions, pm.positions)
        S_Gp[ix] += _dense_condensed(problem.global_patches[s], pm.global_patch_dofs)
        S_L[ix] += _dense_condensed(problem.patches[s], pm.patch_dofs)
    return S_G, S_Gp, S_L


def iteration_matrix(problem, omega=1.0):
    """Error propagation matrix of constant relaxation on a linear problem."""
    S_G, S_Gp, S_L = interface_operators(problem)
    A = (S_G - S_Gp + S_L) @ np.linalg.inv(S_G)
    return np.eye(len(A)) - omega * A


def spectral_radius(M, iterations=2000, seed=0, tol=1e-12):
    """Spectral radius by power iteration (growth of ``||M^k x||``)."""
    x = np.random.default_rng(seed).standard_normal(M.shape[0])
    x /= np.linalg.norm(x)
    rho = 0.0
    # two-step ratios handle a dominant pair of opposite-sign eigenvalues
    for _ in range(iterations):
        y = M @ (M @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        new = np.sqrt(ny)
        x = y / ny
        if abs(new - rho) <= tol * max(new, 1.0):
            return float(new)
        rho = new
    return float(rho)
