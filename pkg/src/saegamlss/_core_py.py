"""Pure numpy implementations of the numerical kernels.

Used when the compiled ``_core`` extension is unavailable or when
``SAEGAMLSS_PURE=1`` is set.  Signatures and results match ``_core.pyx``.
"""
import numpy as np


def wls(X, z, w):
    """Weighted least squares; returns beta."""
    Xw = X * w[:, None]
    A = Xw.T @ X
    b = Xw.T @ z
    c = np.linalg.cholesky(A)
    return np.linalg.solve(c.T, np.linalg.solve(c, b))


def pwls_re(X, z, w, area, J, lam):
    """Solve min sum w (z - X b - g[area])^2 + lam * sum g^2.

    The area effects are absorbed through area sums so the cost is
    O(n p^2 + J p^2).  Returns ``(beta, gamma, nu)`` where ``nu`` is the trace
    of the random-effect smoother, sum_j W_j / (W_j + lam).
    """
    p = X.shape[1]
    W = np.bincount(area, weights=w, minlength=J)
    wz = w * z
    Sz = np.bincount(area, weights=wz, minlength=J)
    Sx = np.empty((J, p))
    for c in range(p):
        Sx[:, c] = np.bincount(area, weights=w * X[:, c], minlength=J)
    D = W + lam
    Xw = X * w[:, None]
    SxD = Sx / D[:, None]
    A = Xw.T @ X - Sx.T @ SxD
    b = X.T @ wz - SxD.T @ Sz
    c = np.linalg.cholesky(A)
    beta = np.linalg.solve(c.T, np.linalg.solve(c, b))
    gamma = (Sz - Sx @ beta) / D
    nu = float(np.sum(W / D))
    return beta, gamma, nu


def group_sum(values, area, J):
    return np.bincount(area, weights=values, minlength=J)
