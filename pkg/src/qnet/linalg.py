"""Dense Gaussian elimination with partial pivoting.

Network sizes here are small (tens of servers), so a direct in-house solver
keeps results bit-reproducible across numpy/BLAS builds.
"""

from __future__ import annotations

import numpy as np

from .errors import SingularSystem

PIVOT_TOL = 1e-14


def solve(a, b, pivot_tol: float = PIVOT_TOL) -> np.ndarray:
    """Solve ``a @ x = b`` for square ``a``; ``b`` may be a vector or a matrix.

    Raises SingularSystem when the largest available pivot in some column is
    below ``pivot_tol`` in magnitude.
    """
    m = np.array(a, dtype=float)
    n = m.shape[0]
    if m.ndim != 2 or m.shape[1] != n:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    rhs = np.array(b, dtype=float)
    vector_rhs = rhs.ndim == 1
    if vector_rhs:
        rhs = rhs[:, None]
    if rhs.shape[0] != n:
        raise ValueError("right-hand side has the wrong number of rows")

    for col in range(n):
        piv = col + int(np.argmax(np.abs(m[col:, col])))
        if abs(m[piv, col]) < pivot_tol:
            raise SingularSystem(
                f"pivot {m[piv, col]:.3e} below {pivot_tol:g} in column {col}"
            )
        if piv != col:
            m[[col, piv]] = m[[piv, col]]
            rhs[[col, piv]] = rhs[[piv, col]]
        below = m[col + 1:, col] / m[col, col]
        m[col + 1:, col:] -= np.outer(below, m[col, col:])
        rhs[col + 1:] -= np.outer(below, rhs[col])

    x = np.zeros_like(rhs)
    for row in range(n - 1, -1, -1):
        x[row] = (rhs[row] - m[row, row + 1:] @ x[row + 1:]) / m[row, row]
    return x[:, 0] if vector_rhs else x


def inverse(a, pivot_tol: float = PIVOT_TOL) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return solve(a, np.eye(a.shape[0]), pivot_tol)
