"""Unitary realisation of a Kraus set on ER (x) E with E in the maximally mixed state.

With rho_E = I / M (M = 2^n_E) the traced conjugation

    rho~ = (1/M) Tr_E V (rho (x) I_E) V^H

equals sum_p K_p rho K_p^H for the M^2 operators K_(nE,iE) = V[(., nE), (., iE)] / sqrt(M).
Every entry of V is therefore fixed by the Kraus set. A set is realisable exactly
when the stacked matrix sqrt(M) [K_(nE,iE)] is unitary on each ER sector, which
is a stronger condition than completeness; :func:`dilate` checks it and reports
the singular values when it fails.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .restoring import KrausSet

ISOMETRY_TOL = 1e-8


class DilationError(ValueError):
    def __init__(self, message: str, singular_values: np.ndarray):
        super().__init__(message)
        self.singular_values = singular_values


def environment_qubits(N_K: int) -> int:
    """Smallest n_E with 4^n_E >= N_K."""
    if N_K < 1:
        raise ValueError("need at least one Kraus operator")
    n = 0
    while 4**n < N_K:
        n += 1
    return n


def label_order(n_E: int) -> list[tuple[int, int]]:
    """(n_E_out, i_E_in) pairs in the order Kraus operators are assigned.

    Off-diagonal cyclic bands come first and the diagonal band last, so that
    zero padding fills whole bands and leaves every row and column of the
    environment grid with the same number of zero blocks.
    """
    M = 2**n_E
    shifts = list(range(1, M)) + [0]
    return [(ne, (ne + s) % M) for s in shifts for ne in range(M)]


@dataclass(frozen=True)
class Dilation:
    n_E: int
    V: np.ndarray  # (d*M, d*M), row (n, nE) -> n*M + nE
    labels: tuple  # labels[p] = (nE, iE) of Kraus operator p
    sectors: tuple

    @property
    def M(self) -> int:
        return 2**self.n_E

    def kraus_ops(self) -> np.ndarray:
        """Re-extracted operators, one per (nE, iE) in label order."""
        d = self.V.shape[0] // self.M
        V4 = self.V.reshape(d, self.M, d, self.M)
        return np.stack([V4[:, ne, :, ie] for ne, ie in self.labels]) / np.sqrt(self.M)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """(1/M) Tr_E V (rho (x) I_E) V^H for an ER operator rho."""
        M = self.M
        d = rho.shape[0]
        big = self.V @ np.kron(rho, np.eye(M)) @ self.V.conj().T
        return np.einsum("aebe->ab", big.reshape(d, M, d, M)) / M


def dilate(kraus: KrausSet, tol: float = ISOMETRY_TOL) -> Dilation:
    """Build V from the Kraus set; fail if it is not unitary on every ER sector."""
    err = kraus.completeness_error()
    if err > 1e-6:
        raise ValueError(f"Kraus set is not complete (error {err:.2e})")
    n_E = environment_qubits(kraus.N_K)
    M = 2**n_E
    labels = label_order(n_E)
    d = kraus.d
    padded = np.zeros((M * M, d, d), dtype=complex)
    padded[: kraus.N_K] = kraus.ops
    V4 = np.zeros((d, M, d, M), dtype=complex)
    for p, (ne, ie) in enumerate(labels):
        V4[:, ne, :, ie] = np.sqrt(M) * padded[p]
    V = V4.reshape(d * M, d * M)
    svals = []
    for s in kraus.sectors:
        rows = (s[:, None] * M + np.arange(M)[None, :]).reshape(-1)
        blk = V[np.ix_(rows, rows)]
        svals.append(np.linalg.svd(blk, compute_uv=False))
    sv = np.concatenate(svals)
    if np.abs(sv - 1).max() > tol:
        raise DilationError(
            f"stacked Kraus blocks are not unitary (singular values in [{sv.min():.3g}, {sv.max():.3g}])",
            sv,
        )
    return Dilation(n_E=n_E, V=V, labels=tuple(labels[: kraus.N_K]), sectors=kraus.sectors)


def verify_dilation(dil: Dilation, kraus: KrausSet, rho: np.ndarray) -> float:
    """Max deviation between the traced dilation and the direct Kraus sum."""
    direct = np.einsum("pxa,ab,pyb->xy", kraus.ops, rho, kraus.ops.conj())
    return float(np.abs(dil.apply(rho) - direct).max())
