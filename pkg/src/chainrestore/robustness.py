"""Random perturbations of restoring Kraus operators and the induced change of T.

A perturbed operator is K~_p = K_p + eps * C_p on the k-excitation ER block with
C_p[i, j] = r_p[i, j] exp(2 pi i q_p[i, j]) X[i, j], r and q uniform on [0, 1].
The profile X is shared by all p and chosen so that the K~_p stay complete.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import linregress

from .restoring import ERLayout, KrausSet, build_T
from .sector_basis import SectorBasis

EPS_GRID = tuple(10.0 ** (-j) for j in range(1, 16))
COMPLETENESS_TOL = 1e-9


class PerturbationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class PerturbationSample:
    eps: float
    corrections: np.ndarray  # (N_K, n, n) C_p on the k-sector block
    perturbed: KrausSet
    delta_T: float
    delta_K: float
    seed: tuple


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r_squared: float


@dataclass(frozen=True)
class SweepFit:
    eps: np.ndarray
    mean_delta_T: np.ndarray
    mean_delta_K: np.ndarray
    fit_T: LineFit
    fit_K: LineFit
    n_samples: int
    excluded: tuple = field(default=())

    def to_rows(self):
        return [(float(e), float(t), float(k)) for e, t, k in zip(self.eps, self.mean_delta_T, self.mean_delta_K)]


def _herm_to_real(H: np.ndarray) -> np.ndarray:
    """Independent real entries of a batch of Hermitian matrices (..., n, n)."""
    n = H.shape[-1]
    iu = np.triu_indices(n)
    iu1 = np.triu_indices(n, 1)
    return np.concatenate([H[..., iu[0], iu[1]].real, H[..., iu1[0], iu1[1]].imag], axis=-1)


def _vec_to_profile(v: np.ndarray, n: int) -> np.ndarray:
    return (v[..., : n * n] + 1j * v[..., n * n :]).reshape(v.shape[:-1] + (n, n))


def _norm_residual(B: np.ndarray, c: np.ndarray, X: np.ndarray, eps: float) -> np.ndarray:
    """sum_p B^H C + C^H B + eps C^H C for C = c * X (Hermitian, batched over X)."""
    C = c * X[..., None, :, :]
    lin = np.einsum("pxa,...pxb->...ab", B.conj(), C)
    quad = np.einsum("...pxa,...pxb->...ab", C.conj(), C)
    return lin + np.swapaxes(lin, -1, -2).conj() + eps * quad


def _profile(B: np.ndarray, c: np.ndarray, eps: float, max_newton: int = 50) -> np.ndarray:
    """Profile X solving the perturbed normalisation condition.

    Start from the minimum-norm correction of the all-ones profile onto the
    null space of the linearised condition, then take minimum-norm Newton
    steps on the full quadratic condition.
    """
    n = B.shape[-1]
    m = 2 * n * n
    basis = np.eye(m)
    Xb = _vec_to_profile(basis, n)

    def jac(X):
        # directional derivatives along each real coordinate
        C = c * X
        Cb = c * Xb[:, None, :, :]
        lin = np.einsum("pxa,kpxb->kab", B.conj() + eps * C.conj(), Cb)
        return _herm_to_real(lin + np.swapaxes(lin, -1, -2).conj()).T

    L0 = jac(np.zeros((n, n), dtype=complex))
    if np.linalg.matrix_rank(L0) < L0.shape[0]:
        raise PerturbationError("linearised normalisation system is singular")
    x = np.ones(m) / np.sqrt(2)
    x = x - np.linalg.lstsq(L0, L0 @ x, rcond=None)[0]
    for _ in range(max_newton):
        X = _vec_to_profile(x, n)
        F = _herm_to_real(_norm_residual(B, c, X, eps))
        if np.abs(F).max() < 1e-13:
            return X
        x = x - np.linalg.lstsq(jac(X), F, rcond=None)[0]
    X = _vec_to_profile(x, n)
    if np.abs(_norm_residual(B, c, X, eps)).max() * eps > 1e-12:
        raise PerturbationError("Newton iteration for the profile did not converge")
    return X


def perturb_kraus(kraus: KrausSet, eps: float, rng: np.random.Generator) -> tuple[KrausSet, np.ndarray]:
    """Perturbed complete set and the corrections C_p on the k-sector block."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    sec = kraus.sectors[-1]
    B = kraus.block(len(kraus.sectors) - 1)
    P, n, _ = B.shape
    r = rng.uniform(0.0, 1.0, (P, n, n))
    q = rng.uniform(0.0, 1.0, (P, n, n))
    c = r * np.exp(2j * np.pi * q)
    X = _profile(B, c, eps)
    corr = c * X
    ops = kraus.ops.copy()
    ops[:, sec[:, None], sec[None, :]] += eps * corr
    out = KrausSet(ops, kraus.sectors)
    blk = out.block(len(kraus.sectors) - 1)
    dev = np.abs(np.einsum("pxa,pxb->ab", blk.conj(), blk) - np.einsum("pxa,pxb->ab", B.conj(), B)).max()
    if dev > COMPLETENESS_TOL:
        raise PerturbationError(f"perturbed set violates completeness by {dev:.2e}")
    return out, corr


def delta_T(T: np.ndarray, T_pert: np.ndarray) -> float:
    """Relative change of T over the given index range (receiver rows and columns)."""
    T = np.asarray(T)
    T_pert = np.asarray(T_pert)
    if T.shape != T_pert.shape:
        raise ValueError("T tensors have different shapes")
    den = np.sum(np.abs(T) ** 2)
    if den == 0:
        raise ZeroDivisionError("T vanishes on the receiver block")
    return float(np.sqrt(np.sum(np.abs(T - T_pert) ** 2) / den))


def delta_K(kraus_block: np.ndarray, scaled_corrections: np.ndarray) -> float:
    """sqrt(sum |eps C_p|^2 / sum |K_p|^2) over all operators and entries."""
    if kraus_block.shape[0] != scaled_corrections.shape[0]:
        raise ValueError("operator counts differ")
    den = np.sum(np.abs(kraus_block) ** 2)
    if den == 0:
        raise ZeroDivisionError("Kraus operators vanish")
    return float(np.sqrt(np.sum(np.abs(scaled_corrections) ** 2) / den))


def receiver_T(kraus: KrausSet, U_cols: np.ndarray, basis: SectorBasis, layout: ERLayout | None = None) -> np.ndarray:
    """T restricted to receiver rows and columns: (N_R, N_R, N_S, N_S)."""
    T = build_T(kraus.restoring_map(), U_cols, basis, layout)
    R = basis.receiver_block
    return T[np.ix_(R, R)]


def sample(kraus: KrausSet, eps: float, U_cols, basis, master_seed: int, eps_index: int, sample_index: int,
           T_ref=None, layout=None, max_redraw: int = 5) -> PerturbationSample:
    """One perturbation; stream key (master_seed, eps_index, sample_index, redraw)."""
    layout = layout or ERLayout.of(basis)
    if T_ref is None:
        T_ref = receiver_T(kraus, U_cols, basis, layout)
    for redraw in range(max_redraw):
        key = (master_seed, eps_index, sample_index, redraw)
        try:
            pert, corr = perturb_kraus(kraus, eps, np.random.default_rng(key))
        except PerturbationError:
            continue
        dT = delta_T(T_ref, receiver_T(pert, U_cols, basis, layout))
        dK = delta_K(kraus.block(len(kraus.sectors) - 1), eps * corr)
        return PerturbationSample(eps, corr, pert, dT, dK, key)
    raise PerturbationError(f"no valid perturbation after {max_redraw} redraws")


def _fit(x: np.ndarray, y: np.ndarray) -> LineFit:
    res = linregress(x, y)
    return LineFit(slope=float(res.slope), intercept=float(res.intercept), r_squared=float(res.rvalue**2))


def sweep_and_fit(kraus: KrausSet, U_cols, basis: SectorBasis, eps_grid=EPS_GRID, n_samples: int = 1000,
                  master_seed: int = 0) -> SweepFit:
    """Average delta_T and delta_K over random perturbations per eps and fit log-log lines."""
    layout = ERLayout.of(basis)
    T_ref = receiver_T(kraus, U_cols, basis, layout)
    eps_grid = np.asarray(eps_grid, dtype=float)
    mT = np.empty(len(eps_grid))
    mK = np.empty(len(eps_grid))
    for j, eps in enumerate(eps_grid):
        dts = np.empty(n_samples)
        dks = np.empty(n_samples)
        for s in range(n_samples):
            smp = sample(kraus, eps, U_cols, basis, master_seed, j, s, T_ref=T_ref, layout=layout)
            dts[s], dks[s] = smp.delta_T, smp.delta_K
        mT[j], mK[j] = dts.mean(), dks.mean()
    keep = (mT > 0) & (mK > 0)
    excluded = tuple(float(e) for e in eps_grid[~keep])
    if excluded:
        warnings.warn(f"eps values with zero average excluded from the fit: {excluded}")
    lx = np.log10(eps_grid[keep])
    return SweepFit(
        eps=eps_grid,
        mean_delta_T=mT,
        mean_delta_K=mK,
        fit_T=_fit(lx, np.log10(mT[keep])),
        fit_K=_fit(lx, np.log10(mK[keep])),
        n_samples=n_samples,
        excluded=excluded,
    )
