"""Levenberg-Marquardt for small dense (possibly underdetermined) systems r(x) = 0."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg


@dataclass
class LSQResult:
    x: np.ndarray
    residual: np.ndarray
    iterations: int
    converged: bool

    @property
    def max_residual(self) -> float:
        return float(np.abs(self.residual).max()) if self.residual.size else 0.0


_INITIAL_DAMPING = 1e-3


def _spd_solve(A, b):
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(A, check_finite=False), b, check_finite=False)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, b, rcond=None)[0]


def levenberg_marquardt(
    fun: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    x0: np.ndarray,
    *,
    free: np.ndarray | None = None,
    max_iter: int = 400,
    rtol: float = 1e-12,
    xtol: float = 1e-14,
    stall: int = 0,
) -> LSQResult:
    """Minimise |r(x)|^2 / 2 with damped Gauss-Newton steps.

    ``fun`` returns (r, J). Only coordinates flagged in ``free`` move. Damping
    follows Nielsen's update of the gain ratio. With ``stall > 0`` the loop gives
    up once the cost has not halved over that many iterations.
    """
    x = np.array(x0, dtype=float)
    if free is None:
        free = np.ones(x.size, dtype=bool)
    r, J = fun(x)
    J = J[:, free]
    cost = 0.5 * r @ r
    g = J.T @ r
    mu = _INITIAL_DAMPING * max(np.einsum("ij,ij->j", J, J).max(), 1e-12)
    nu = 2.0
    history = [cost]
    it = 0
    converged = np.linalg.norm(r) < rtol
    while not converged and it < max_iter:
        it += 1
        m, n = J.shape
        if m < n:
            A = J @ J.T
            A[np.diag_indices(m)] += mu
            step = -J.T @ _spd_solve(A, r)
        else:
            A = J.T @ J
            A[np.diag_indices(n)] += mu
            step = -_spd_solve(A, g)
        xn = x.copy()
        xn[free] += step
        rn, Jn = fun(xn)
        cost_n = 0.5 * rn @ rn
        pred = 0.5 * step @ (mu * step - g)
        gain = (cost - cost_n) / pred if pred > 0 else -1.0
        if gain > 0:
            x, r, J, cost = xn, rn, Jn[:, free], cost_n
            g = J.T @ r
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * gain - 1.0) ** 3)
            nu = 2.0
            if np.linalg.norm(r) < rtol:
                converged = True
                break
        else:
            mu *= nu
            nu *= 2.0
        if np.linalg.norm(step) < xtol * (np.linalg.norm(x) + xtol):
            break
        history.append(cost)
        if stall and len(history) > stall and history[-1] > 0.5 * history[-1 - stall]:
            break
    return LSQResult(x=x, residual=r, iterations=it, converged=converged)
