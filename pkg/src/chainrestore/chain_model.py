"""XX dipole-dipole chain Hamiltonian and the dephasing Lindblad generator.

Couplings are dimensionless (the reference nearest-neighbour coupling is 1),
hbar = 1, and time is measured in units of the inverse reference coupling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sector_basis import ChainPartition, SectorBasis

# Boundary bonds of the high-fidelity chain, outermost first.
HFST_END_BONDS = (0.348, 0.510)


class ModelError(ValueError):
    pass


def couplings_from_bonds(bonds) -> np.ndarray:
    """All-pair dipolar couplings 1/r^3 for sites placed so that the
    nearest-neighbour couplings equal ``bonds``."""
    bonds = np.asarray(bonds, dtype=float)
    if np.any(bonds <= 0):
        raise ModelError("nearest-neighbour couplings must be positive")
    pos = np.concatenate([[0.0], np.cumsum(bonds ** (-1.0 / 3.0))])
    r = np.abs(pos[:, None] - pos[None, :])
    np.fill_diagonal(r, np.inf)
    D = 1.0 / r**3
    # exact nearest-neighbour values, free of cube-root round-off
    idx = np.arange(len(bonds))
    D[idx, idx + 1] = D[idx + 1, idx] = bonds
    return D


def build_couplings(profile: str, partition: ChainPartition, *, end_bonds=HFST_END_BONDS, matrix=None) -> np.ndarray:
    N = partition.N
    if profile == "homogeneous":
        return couplings_from_bonds(np.ones(N - 1))
    if profile == "hfst":
        end_bonds = tuple(end_bonds)
        if 2 * len(end_bonds) > N - 1:
            raise ModelError("chain too short for the requested boundary bonds")
        bonds = np.ones(N - 1)
        for j, b in enumerate(end_bonds):
            bonds[j] = bonds[N - 2 - j] = b
        return couplings_from_bonds(bonds)
    if profile == "explicit":
        if matrix is None:
            raise ModelError("explicit profile needs a coupling matrix")
        D = np.array(matrix, dtype=float)
        if D.shape != (N, N):
            raise ModelError(f"coupling matrix must be {N}x{N}")
        if not np.allclose(D, D.T) or np.any(np.diag(D) != 0) or np.any(D < 0):
            raise ModelError("coupling matrix must be symmetric, nonnegative, zero diagonal")
        return D
    raise ModelError(f"unknown coupling profile {profile!r}")


@dataclass(frozen=True)
class ChainSpec:
    partition: ChainPartition
    couplings: np.ndarray
    gamma: np.ndarray
    profile: str = "explicit"

    @classmethod
    def make(cls, partition: ChainPartition, profile: str = "homogeneous", gamma=0.0, **kw) -> "ChainSpec":
        D = build_couplings(profile, partition, **kw)
        g = np.broadcast_to(np.asarray(gamma, dtype=float), (partition.N,)).copy()
        if np.any(g < 0):
            raise ModelError("dephasing rates must be nonnegative")
        return cls(partition=partition, couplings=D, gamma=g, profile=profile)

    def with_gamma(self, gamma) -> "ChainSpec":
        g = np.broadcast_to(np.asarray(gamma, dtype=float), (self.partition.N,)).copy()
        return ChainSpec(self.partition, self.couplings, g, self.profile)


def _check(spec: ChainSpec, basis: SectorBasis):
    if basis.partition != spec.partition:
        raise ModelError("basis and chain spec use different partitions")


def build_hamiltonian(spec: ChainSpec, basis: SectorBasis) -> np.ndarray:
    """Sector matrix of H = sum_{i<j} D_ij (Ix_i Ix_j + Iy_i Iy_j).

    The only nonzero elements are flip-flops: <n|H|m> = D_ij / 2 when n is m with
    one excitation moved from site j to site i.
    """
    _check(spec, basis)
    D = spec.couplings
    H = np.zeros((basis.dim, basis.dim), dtype=complex)
    for m, st in enumerate(basis.states):
        occ = set(st)
        for j in st:
            rest = occ - {j}
            for i in range(spec.partition.N):
                if i in occ:
                    continue
                n = basis.index_of(rest | {i})
                H[n, m] += D[i, j] / 2
    return H


def z_eigenvalues(basis: SectorBasis) -> np.ndarray:
    """(dim, N) array of I_z eigenvalues: +1/2 on excited sites, -1/2 otherwise."""
    z = -0.5 * np.ones((basis.dim, basis.partition.N))
    for n, st in enumerate(basis.states):
        z[n, list(st)] = 0.5
    return z


@dataclass(frozen=True)
class LindbladGenerator:
    """u acting on row-major vectorised sector density matrices (index n*dim + m)."""

    H: np.ndarray
    dephasing: np.ndarray  # (dim, dim) rates multiplying rho_nm
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.H.shape[0]


def build_generator(spec: ChainSpec, basis: SectorBasis, H: np.ndarray | None = None) -> LindbladGenerator:
    """Lindblad generator with dephasing operators L_l = I_z,l and rates Gamma_l.

    u_{nm;ij} = -i (H_ni d_jm - d_ni H_jm)
                + sum_l Gamma_l ((Z_l)_n (Z_l)_m - 1/4) d_ni d_jm
    """
    _check(spec, basis)
    if H is None:
        H = build_hamiltonian(spec, basis)
    if H.shape != (basis.dim, basis.dim):
        raise ModelError("Hamiltonian does not match the basis dimension")
    z = z_eigenvalues(basis)
    deph = (z * spec.gamma) @ z.T - 0.25 * spec.gamma.sum()
    eye = np.eye(basis.dim)
    u = -1j * (np.kron(H, eye) - np.kron(eye, H.T)) + np.diag(deph.reshape(-1))
    return LindbladGenerator(H=H, dephasing=deph, matrix=u)
