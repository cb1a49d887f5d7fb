"""Receiver projection, controlled flip onto an ancilla qubit B, and the measured output."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sector_basis import SectorBasis

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


class MeasurementFailure(ArithmeticError):
    """Success probability too small to renormalise the receiver state."""


@dataclass(frozen=True)
class MeasurementOutcome:
    rho_out: np.ndarray
    p_success: float
    garbage_norm: float


def receiver_projector(basis: SectorBasis) -> np.ndarray:
    """Projector onto the chain states whose excitations all sit on the receiver."""
    P = np.zeros((basis.dim, basis.dim), dtype=complex)
    R = basis.receiver_block
    P[R, R] = 1.0
    return P


def controlled_flip(P: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """W = P (x) sigma_x + (I - P) (x) I on chain (x) B, B the last factor."""
    P = np.asarray(P, dtype=complex)
    if np.abs(P @ P - P).max() > tol or np.abs(P - P.conj().T).max() > tol:
        raise ValueError("P is not an orthogonal projector")
    eye = np.eye(P.shape[0])
    return np.kron(P, SIGMA_X) + np.kron(eye - P, np.eye(2))


def flip_and_measure(rho: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, float]:
    """Explicit ancilla path: attach |0>_B, apply W, keep the |1>_B branch.

    Returns the unnormalised chain block and its trace. Used to check the
    projector shortcut in :func:`measure_extract`.
    """
    W = controlled_flip(P)
    ket0 = np.array([[1.0, 0.0], [0.0, 0.0]])
    out = W @ np.kron(rho, ket0) @ W.conj().T
    d = rho.shape[0]
    branch = out.reshape(d, 2, d, 2)[:, 1, :, 1]
    return branch, float(np.trace(branch).real)


def measure_extract(rho: np.ndarray, basis: SectorBasis, tol: float = 1e-10) -> MeasurementOutcome:
    """Project the restored state on the receiver block and renormalise."""
    rho = np.asarray(rho, dtype=complex)
    if np.abs(rho - rho.conj().T).max() > tol:
        raise ValueError("restored state is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValueError("restored state does not have unit trace")
    R = basis.receiver_block
    block = rho[np.ix_(R, R)]
    p = float(np.trace(block).real)
    if p < 1e-12:
        raise MeasurementFailure(f"success probability {p:.3e} below 1e-12")
    return MeasurementOutcome(rho_out=block / p, p_success=p, garbage_norm=1.0 - p)


def output_fidelity(rho_out: np.ndarray, rho_s0: np.ndarray, tol: float = 1e-9) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(a) b sqrt(a)))^2."""
    a = np.asarray(rho_out, dtype=complex)
    b = np.asarray(rho_s0, dtype=complex)
    if a.shape != b.shape:
        raise ValueError("states have different dimensions")
    for m in (a, b):
        if np.linalg.eigvalsh((m + m.conj().T) / 2).min() < -tol:
            raise ValueError("state is not positive semidefinite")
    w, v = np.linalg.eigh((a + a.conj().T) / 2)
    sa = (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T
    mid = sa @ b @ sa
    ev = np.linalg.eigvalsh((mid + mid.conj().T) / 2)
    f = float(np.sum(np.sqrt(np.clip(ev, 0, None))) ** 2)
    return min(max(f, 0.0), 1.0)

