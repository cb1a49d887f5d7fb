"""Time evolution of sector density matrices and the closed-chain lambda curve."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.optimize import minimize_scalar

from .chain_model import ChainSpec, LindbladGenerator, build_hamiltonian
from .sector_basis import SectorBasis


class PropagationError(ArithmeticError):
    pass


class DensityMatrixError(ValueError):
    pass


@dataclass(frozen=True)
class Propagator:
    t: float
    U: np.ndarray  # (dim^2, dim^2)
    sender: np.ndarray  # flat indices of the sender block

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.U.shape[0])))

    @property
    def sender_columns(self) -> np.ndarray:
        """(dim, dim, N_S, N_S): rho(t) produced by the matrix unit |i_S><j_S|."""
        d = self.dim
        s = self.sender
        cols = (s[:, None] * d + s[None, :]).reshape(-1)
        ns = len(s)
        return self.U[:, cols].reshape(d, d, ns, ns)


def expm_generator(gen: LindbladGenerator, t: float, sender: np.ndarray) -> Propagator:
    """U(t) = exp(u t) by scaling and squaring with a degree-13 Pade approximant."""
    if t < 0:
        raise PropagationError("time must be nonnegative")
    if not np.all(np.isfinite(gen.matrix)):
        raise PropagationError("generator has non-finite entries")
    U = scipy.linalg.expm(gen.matrix * t)
    if not np.all(np.isfinite(U)):
        raise PropagationError("matrix exponential overflowed")
    return Propagator(t=float(t), U=U, sender=np.asarray(sender, dtype=int))


def check_density_matrix(rho: np.ndarray, tol: float = 1e-9) -> None:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DensityMatrixError("density matrix must be square")
    if np.abs(rho - rho.conj().T).max() > tol:
        raise DensityMatrixError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise DensityMatrixError("density matrix does not have unit trace")
    if np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() < -tol:
        raise DensityMatrixError("density matrix is not positive semidefinite")


def evolve(prop: Propagator, rho_S0: np.ndarray) -> np.ndarray:
    """Full sector rho(t) from a sender-block initial state."""
    rho_S0 = np.asarray(rho_S0, dtype=complex)
    if rho_S0.shape != (len(prop.sender),) * 2:
        raise DensityMatrixError(f"sender state must be {len(prop.sender)}x{len(prop.sender)}")
    check_density_matrix(rho_S0)
    return np.einsum("nmij,ij->nm", prop.sender_columns, rho_S0)


def embed_sender_state(basis: SectorBasis, rho_S0: np.ndarray) -> np.ndarray:
    rho = np.zeros((basis.dim, basis.dim), dtype=complex)
    s = basis.sender_block
    rho[np.ix_(s, s)] = rho_S0
    return rho


# --------------------------------------------------------------------------
# Closed-chain lambda (two-state sender)


def lambda_roots_2qubit(Vhat: np.ndarray) -> tuple[float, float]:
    """Roots of the quadratic for lambda built from the Gram matrix of Vhat's columns.

    lambda = (b00 + b11 -/+ sqrt((b00 - b11)^2 + 4 b01 b10)) / 2, b_ij = b_i^H b_j.
    """
    Vhat = np.asarray(Vhat)
    if Vhat.ndim != 2 or Vhat.shape[1] != 2:
        raise ValueError("Vhat must have exactly two columns")
    b0, b1 = Vhat[:, 0], Vhat[:, 1]
    b00 = np.vdot(b0, b0).real
    b11 = np.vdot(b1, b1).real
    b01b10 = (np.vdot(b0, b1) * np.vdot(b1, b0)).real
    disc = (b00 - b11) ** 2 + 4 * b01b10
    if disc < -1e-12:
        raise PropagationError(f"negative discriminant {disc:.3e}")
    root = np.sqrt(max(disc, 0.0))
    return 0.5 * (b00 + b11 - root), 0.5 * (b00 + b11 + root)


class ClosedChain:
    """Unitary sector propagator exp(-iHt) via one eigendecomposition of H."""

    def __init__(self, spec: ChainSpec, basis: SectorBasis):
        self.basis = basis
        self.H = build_hamiltonian(spec, basis)
        self.w, self.v = np.linalg.eigh(self.H)
        self._rows = self.v[basis.er_block, :]
        self._cols = self.v[basis.sender_block, :].conj()

    def vhat(self, t: float) -> np.ndarray:
        """Amplitudes from sender-block states to fully-ER states."""
        return (self._rows * np.exp(-1j * self.w * t)) @ self._cols.T

    def vhat_many(self, ts: np.ndarray) -> np.ndarray:
        ph = np.exp(-1j * np.outer(ts, self.w))
        return np.einsum("ak,tk,bk->tab", self._rows, ph, self._cols)

    def lambdas(self, t: float) -> tuple[float, float]:
        return lambda_roots_2qubit(self.vhat(t))


@dataclass(frozen=True)
class LambdaCurve:
    tau: np.ndarray
    lambda_min: np.ndarray
    lambda_max: np.ndarray
    t0: float
    lambda0: float

    def to_csv(self, path: Path, header: list[str] | None = None) -> None:
        with open(path, "w", newline="") as fh:
            for line in header or []:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tau", "lambda_min", "lambda_max"])
            for row in zip(self.tau, self.lambda_min, self.lambda_max):
                w.writerow([f"{row[0]:.6f}", f"{row[1]:.12e}", f"{row[2]:.12e}"])


def _gram_roots(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    b00 = np.einsum("ta,ta->t", V[:, :, 0].conj(), V[:, :, 0]).real
    b11 = np.einsum("ta,ta->t", V[:, :, 1].conj(), V[:, :, 1]).real
    b01 = np.einsum("ta,ta->t", V[:, :, 0].conj(), V[:, :, 1])
    root = np.sqrt(np.maximum((b00 - b11) ** 2 + 4 * np.abs(b01) ** 2, 0.0))
    return 0.5 * (b00 + b11 - root), 0.5 * (b00 + b11 + root)


def find_t0(
    spec: ChainSpec,
    basis: SectorBasis,
    tau_max: float | None = None,
    step: float = 0.002,
    min_fraction: float = 0.1,
) -> LambdaCurve:
    """Locate the first significant local maximum of lambda_min(tau) at Gamma = 0.

    Maxima lower than ``min_fraction`` times the largest sampled value are
    skipped; before the excitation reaches the receiver the curve is round-off
    noise of order 1e-10 with spurious local maxima.
    """
    if len(basis.sender_block) != 2:
        raise ValueError("the lambda oracle needs a two-state sender block")
    chain = ClosedChain(spec.with_gamma(0.0), basis)
    if tau_max is None:
        tau_max = 3.0 * spec.partition.N
    n = int(round(tau_max / step)) + 1
    tau = np.round(np.arange(n) * step, 10)
    lo, hi = _gram_roots(chain.vhat_many(tau))
    floor = min_fraction * lo.max()
    peak = None
    for i in range(1, n - 1):
        if lo[i] > lo[i - 1] and lo[i] >= lo[i + 1] and lo[i] >= floor:
            j = i
            while j + 1 < n - 1 and lo[j + 1] == lo[i]:
                j += 1
            if lo[j + 1] < lo[i]:
                peak = i
                break
    if peak is None:
        raise PropagationError(f"no local maximum of lambda within tau <= {tau_max}")
    res = minimize_scalar(
        lambda t: -chain.lambdas(t)[0],
        bracket=(tau[peak - 1], tau[peak], tau[peak + 1]),
        method="golden",
        tol=1e-10,
    )
    return LambdaCurve(tau=tau, lambda_min=lo, lambda_max=hi, t0=float(res.x), lambda0=float(-res.fun))
