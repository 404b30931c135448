"""Shared finite-difference building blocks on uniform 1-d grids.

The profile energy uses a fourth-order first-derivative matrix G (5-point
central stencil, constant extension into the ghost cells) together with
trapezoid quadrature weights w, so the discrete energy

    E_h[u] = sum_j w_j ( 1/2 |(G u)_j|^2 + W(u_j) )

is an exact function of the nodal values and its gradient

    grad E_h = G^T diag(w) G u + w * grad_W(u)

is what the profile Newton solver drives to zero. Identities that hold for
the continuum minimizer (equipartition, the envelope derivative, the
solvability pairing) then hold for the discrete one up to O(h^4).

The linearization module uses the classical second-order Laplacian D2; its
contracts are stated at O(h^2) and the operator must stay the standard
symmetric tridiagonal stencil.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = ["trapezoid_weights", "derivative_matrix_4", "laplacian_matrix_2"]


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = h / 2.0
    return w


def derivative_matrix_4(n: int, h: float) -> sp.csr_matrix:
    """Fourth-order first derivative with constant ghost extension.

    Row j applies (u[j-2] - 8 u[j-1] + 8 u[j+1] - u[j+2]) / (12 h) with
    out-of-range indices clipped to the boundary node, i.e. the field is
    extended by its boundary value. Exact for constants; fourth-order
    accurate wherever the stencil does not touch the ghosts, and the rows
    that do sit in the flat vacuum tails where the defect vanishes.
    """
    offsets = np.array([-2, -1, 1, 2])
    coefs = np.array([1.0, -8.0, 8.0, -1.0]) / (12.0 * h)
    rows, cols, vals = [], [], []
    j = np.arange(n)
    for off, c in zip(offsets, coefs):
        rows.append(j)
        cols.append(np.clip(j + off, 0, n - 1))
        vals.append(np.full(n, c))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return mat.tocsr()


def laplacian_matrix_2(n: int, h: float) -> sp.csr_matrix:
    """Second-order -d^2/dx^2 on interior unknowns with Dirichlet ends.

    Shape (n-2, n-2); boundary values enter through the right-hand side if
    nonzero (profile boundary data is vacuum so they never do here).
    """
    return sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n - 2, n - 2)) / h**2
