"""Fixed-excitation basis of a spin-1/2 chain split into sender, line and receiver.

Sites are numbered 0..N-1 along the chain:

    S = [0, n_S)          sender
    TL' = [n_S, n_S + n_TL - n_A)
    A = next n_A sites    ancilla part of the extended receiver
    R = last n_R sites    receiver

ER = A + R is the extended receiver. A chain state in the k-excitation sector is
identified with the sorted tuple of its excited sites.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np


class BasisError(ValueError):
    """Raised for out-of-range excitation numbers or indices."""


@dataclass(frozen=True)
class ChainPartition:
    n_S: int
    n_TL: int
    n_R: int
    n_A: int = 1

    def __post_init__(self):
        if self.n_S < 1 or self.n_R < 1:
            raise BasisError("sender and receiver need at least one spin")
        if not 0 <= self.n_A <= self.n_TL:
            raise BasisError(f"n_A={self.n_A} must lie in [0, n_TL={self.n_TL}]")

    @classmethod
    def from_length(cls, N: int, n_S: int = 2, n_R: int = 2, n_A: int = 1) -> "ChainPartition":
        return cls(n_S=n_S, n_TL=N - n_S - n_R, n_R=n_R, n_A=n_A)

    @property
    def N(self) -> int:
        return self.n_S + self.n_TL + self.n_R

    @property
    def n_ER(self) -> int:
        return self.n_A + self.n_R

    @property
    def n_TLp(self) -> int:
        return self.n_TL - self.n_A

    @property
    def sender_sites(self) -> range:
        return range(0, self.n_S)

    @property
    def line_sites(self) -> range:
        return range(self.n_S, self.n_S + self.n_TLp)

    @property
    def er_sites(self) -> range:
        return range(self.N - self.n_ER, self.N)

    @property
    def receiver_sites(self) -> range:
        return range(self.N - self.n_R, self.N)


def _local_states(sites: range, kmax: int) -> list[tuple[int, ...]]:
    """All subsets of ``sites`` with at most ``kmax`` elements, sector-major."""
    out: list[tuple[int, ...]] = []
    for j in range(0, min(kmax, len(sites)) + 1):
        out.extend(combinations(sites, j))
    return out


def ordering_key(state: tuple[int, ...], partition: ChainPartition):
    er = partition.er_sites
    r = partition.receiver_sites
    in_er = sum(1 for s in state if s in er)
    in_r = sum(1 for s in state if s in r)
    return (in_er, in_r, state)


@dataclass(frozen=True)
class SectorBasis:
    partition: ChainPartition
    k: int
    states: tuple[tuple[int, ...], ...]
    # local bases of the three subsystems (sector-major, lexicographic in a sector)
    local_S: tuple[tuple[int, ...], ...]
    local_TLp: tuple[tuple[int, ...], ...]
    local_ER: tuple[tuple[int, ...], ...]
    multi_index: np.ndarray = field(repr=False)  # (dim, 3) local indices
    counts: np.ndarray = field(repr=False)  # (dim, 3) excitations per subsystem
    _lookup: dict = field(repr=False, compare=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def receiver_block(self) -> np.ndarray:
        """Flat indices of states whose excitations all lie in R."""
        r = self.partition.receiver_sites
        return np.array([i for i, s in enumerate(self.states) if all(x in r for x in s)], dtype=int)

    @property
    def sender_block(self) -> np.ndarray:
        """Flat indices of states whose excitations all lie in S."""
        sS = self.partition.sender_sites
        return np.array([i for i, s in enumerate(self.states) if all(x in sS for x in s)], dtype=int)

    @property
    def er_block(self) -> np.ndarray:
        """Flat indices of states whose excitations all lie in ER."""
        er = self.partition.er_sites
        return np.array([i for i, s in enumerate(self.states) if all(x in er for x in s)], dtype=int)

    @property
    def er_sector_dims(self) -> list[int]:
        return [comb(self.partition.n_ER, j) for j in range(self.k + 1)]

    def er_sector_of(self, local_er: int) -> int:
        return len(self.local_ER[local_er])

    def index_of(self, state) -> int:
        return self._lookup[tuple(sorted(state))]

    def decompose(self, flat: int) -> tuple[int, int, int]:
        return decompose_index(self, flat)

    def compose(self, i_S: int, i_TLp: int, i_ER: int) -> int:
        return compose_index(self, i_S, i_TLp, i_ER)


def build_sector_basis(partition: ChainPartition, k: int) -> SectorBasis:
    N = partition.N
    if not 0 <= k <= N:
        raise BasisError(f"excitation number k={k} outside [0, {N}]")
    states = sorted(combinations(range(N), k), key=lambda s: ordering_key(s, partition))
    local_S = _local_states(partition.sender_sites, k)
    local_T = _local_states(partition.line_sites, k)
    local_E = _local_states(partition.er_sites, k)
    pos_S = {s: i for i, s in enumerate(local_S)}
    pos_T = {s: i for i, s in enumerate(local_T)}
    pos_E = {s: i for i, s in enumerate(local_E)}
    mi = np.empty((len(states), 3), dtype=int)
    cnt = np.empty((len(states), 3), dtype=int)
    for n, st in enumerate(states):
        parts = (
            tuple(x for x in st if x in partition.sender_sites),
            tuple(x for x in st if x in partition.line_sites),
            tuple(x for x in st if x in partition.er_sites),
        )
        mi[n] = (pos_S[parts[0]], pos_T[parts[1]], pos_E[parts[2]])
        cnt[n] = [len(p) for p in parts]
    mi.setflags(write=False)
    cnt.setflags(write=False)
    return SectorBasis(
        partition=partition,
        k=k,
        states=tuple(states),
        local_S=tuple(local_S),
        local_TLp=tuple(local_T),
        local_ER=tuple(local_E),
        multi_index=mi,
        counts=cnt,
        _lookup={s: i for i, s in enumerate(states)},
    )


def decompose_index(basis: SectorBasis, flat: int) -> tuple[int, int, int]:
    """Flat sector index -> local indices (i_S, i_TL', i_ER)."""
    if not 0 <= flat < basis.dim:
        raise BasisError(f"index {flat} outside [0, {basis.dim})")
    return tuple(int(v) for v in basis.multi_index[flat])


def compose_index(basis: SectorBasis, i_S: int, i_TLp: int, i_ER: int) -> int:
    try:
        state = basis.local_S[i_S] + basis.local_TLp[i_TLp] + basis.local_ER[i_ER]
    except IndexError as exc:
        raise BasisError("local index out of range") from exc
    if len(state) != basis.k:
        raise BasisError(f"local indices carry {len(state)} excitations, sector has k={basis.k}")
    return basis.index_of(state)


@dataclass(frozen=True)
class DimensionReport:
    N_S: int
    N_R: int
    N_ER: int
    N_K: int
    N_par: int
    N_eq: int
    pareq_ok: bool
    proposition_ok: bool
    sender_receiver_match: bool

    @property
    def ok(self) -> bool:
        return self.pareq_ok and self.proposition_ok and self.sender_receiver_match


def dimension_report(partition: ChainPartition, k: int, N_K: int) -> DimensionReport:
    """Parameter/constraint counting for a restoring problem.

    ``N_par = N_ER^2 (2 N_K - 1)`` free real Kraus parameters against
    ``N_eq = N_R^4 - 2`` real restoring conditions, and the minimal extended
    receiver requirement ``N_ER >= N_R + 1``.
    """
    N_S = comb(partition.n_S, k)
    N_R = comb(partition.n_R, k)
    N_ER = comb(partition.n_ER, k)
    N_par = N_ER**2 * (2 * N_K - 1)
    N_eq = N_R**4 - 2
    return DimensionReport(
        N_S=N_S,
        N_R=N_R,
        N_ER=N_ER,
        N_K=N_K,
        N_par=N_par,
        N_eq=N_eq,
        pareq_ok=N_par >= N_eq,
        proposition_ok=N_ER >= N_R + 1,
        sender_receiver_match=N_S == N_R,
    )
