"""Bilinear quadrilateral with 2x2 Gauss quadrature."""

import numpy as np

_G = 1.0 / np.sqrt(3.0)
GAUSS_POINTS = np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]])
GAUSS_WEIGHTS = np.ones(4)
_XI = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def shape_functions(xi, eta):
    return 0.25 * (1.0 + _XI[:, 0] * xi) * (1.0 + _XI[:, 1] * eta)


def shape_derivatives(xi, eta):
    """Derivatives w.r.t. (xi, eta), shape (2, 4)."""
    dxi = 0.25 * _XI[:, 0] * (1.0 + _XI[:, 1] * eta)
    deta = 0.25 * _XI[:, 1] * (1.0 + _XI[:, 0] * xi)
    return np.vstack([dxi, deta])


_DN = np.array([shape_derivatives(*gp) for gp in GAUSS_POINTS])  # (4gp, 2, 4)


def jacobian_determinants(coords):
    """Jacobian determinants at the Gauss points, shape (n_el, 4)."""
    J = np.einsum("gan,enb->egab", _DN, coords)
    return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]


def strain_displacement(coords):
    """B matrices and integration weights for a batch of elements.

    Parameters
    ----------
    coords : ndarray, shape (n_el, 4, 2)

    Returns
    -------
    B : ndarray, shape (n_el, 4, 3, 8)
        Maps element DOFs ``[u1, v1, ..., u4, v4]`` to ``[exx, eyy, gxy]``.
    wdet : ndarray, shape (n_el, 4)
        Gauss weight times Jacobian determinant.
    """
    J = np.einsum("gan,enb->egab", _DN, coords)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    dN = np.einsum("egab,gbn->egan", inv, _DN)  # d/dx, d/dy
    n_el = coords.shape[0]
    B = np.zeros((n_el, 4, 3, 8))
    B[:, :, 0, 0::2] = dN[:, :, 0, :]
    B[:, :, 1, 1::2] = dN[:, :, 1, :]
    B[:, :, 2, 0::2] = dN[:, :, 1, :]
    B[:, :, 2, 1::2] = dN[:, :, 0, :]
    return B, det * GAUSS_WEIGHTS
