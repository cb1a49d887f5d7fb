from functools import reduce

import numpy as np
import pytest

from chainrestore.chain_model import (
    HFST_END_BONDS,
    ChainSpec,
    ModelError,
    build_couplings,
    build_generator,
    build_hamiltonian,
    couplings_from_bonds,
)
from chainrestore.sector_basis import ChainPartition, build_sector_basis

SX = np.array([[0, 1], [1, 0]]) / 2
SY = np.array([[0, -1j], [1j, 0]]) / 2
SZ = np.array([[1, 0], [0, -1]]) / 2  # |1> = up = excited, first basis vector


def site_op(op, site, N):
    mats = [np.eye(2)] * N
    mats[site] = op
    return reduce(np.kron, mats)


def full_state_vector(state, N):
    """Computational vector with excited (up) spins on the given sites."""
    up, down = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    return reduce(np.kron, [up if i in state else down for i in range(N)])


def sector_isometry(basis):
    N = basis.partition.N
    return np.stack([full_state_vector(s, N) for s in basis.states], axis=1)


def brute_hamiltonian(D):
    N = D.shape[0]
    H = np.zeros((2**N, 2**N), dtype=complex)
    for i in range(N):
        for j in range(i + 1, N):
            H += D[i, j] * (site_op(SX, i, N) @ site_op(SX, j, N) + site_op(SY, i, N) @ site_op(SY, j, N))
    return H


@pytest.mark.parametrize("N,k", [(5, 1), (5, 2), (6, 1), (6, 3)])
def test_hamiltonian_matches_full_space(N, k):
    part = ChainPartition.from_length(N)
    b = build_sector_basis(part, k)
    rng = np.random.default_rng(N * 10 + k)
    D = rng.uniform(0.1, 1.0, (N, N))
    D = np.triu(D, 1)
    D = D + D.T
    spec = ChainSpec.make(part, "explicit", matrix=D)
    V = sector_isometry(b)
    expected = V.T @ brute_hamiltonian(D) @ V
    assert np.allclose(build_hamiltonian(spec, b), expected, atol=1e-13)


def test_homogeneous_couplings_are_dipolar():
    D = build_couplings("homogeneous", ChainPartition.from_length(6))
    assert D[0, 1] == 1.0
    assert np.isclose(D[0, 2], 1 / 8)
    assert np.isclose(D[1, 4], 1 / 27)
    assert np.allclose(D, D.T)


def test_hfst_end_bonds_and_positions():
    part = ChainPartition.from_length(10)
    D = build_couplings("hfst", part)
    outer, second = HFST_END_BONDS
    assert D[0, 1] == outer and D[8, 9] == outer
    assert D[1, 2] == second and D[7, 8] == second
    assert D[4, 5] == 1.0
    # positions follow from the bonds: r01 = outer^(-1/3), r12 = second^(-1/3)
    r02 = outer ** (-1 / 3) + second ** (-1 / 3)
    assert np.isclose(D[0, 2], r02**-3)


def test_bonds_must_be_positive():
    with pytest.raises(ModelError):
        couplings_from_bonds([1.0, 0.0, 1.0])


def test_explicit_couplings_validated():
    part = ChainPartition.from_length(5)
    with pytest.raises(ModelError):
        build_couplings("explicit", part, matrix=np.ones((5, 5)))
    with pytest.raises(ModelError):
        build_couplings("explicit", part, matrix=np.zeros((4, 4)))
    with pytest.raises(ModelError):
        build_couplings("spiral", part)


def test_negative_rate_rejected():
    with pytest.raises(ModelError):
        ChainSpec.make(ChainPartition.from_length(5), gamma=-0.1)


def test_sector_generator_matches_full_lindbladian():
    """Sector block of -i[H, rho] + sum_l G_l (Z_l rho Z_l - rho / 4) in full space."""
    N = 5
    part = ChainPartition.from_length(N)
    rng = np.random.default_rng(3)
    gammas = rng.uniform(0.0, 0.3, N)
    spec = ChainSpec.make(part, "homogeneous", gamma=gammas)
    for k in (1, 2):
        b = build_sector_basis(part, k)
        V = sector_isometry(b)
        Hf = brute_hamiltonian(spec.couplings)
        Zs = [site_op(SZ, l, N) for l in range(N)]
        gen = build_generator(spec, b)
        for _ in range(3):
            a = rng.standard_normal((b.dim, b.dim)) + 1j * rng.standard_normal((b.dim, b.dim))
            rho_full = V @ a @ V.T
            drho = -1j * (Hf @ rho_full - rho_full @ Hf)
            for g, Z in zip(gammas, Zs):
                drho += g * (Z @ rho_full @ Z - rho_full / 4)
            expected = V.T @ drho @ V
            got = (gen.matrix @ a.reshape(-1)).reshape(b.dim, b.dim)
            assert np.allclose(got, expected, atol=1e-12)


def test_dephasing_rates_are_hamming_weighted():
    part = ChainPartition.from_length(5)
    b = build_sector_basis(part, 2)
    g = 0.7
    gen = build_generator(ChainSpec.make(part, gamma=g), b)
    for n, sn in enumerate(b.states):
        for m, sm in enumerate(b.states):
            d = len(set(sn) ^ set(sm))
            assert np.isclose(gen.dephasing[n, m], -g * d / 2)


def test_generator_preserves_trace():
    part = ChainPartition.from_length(6)
    b = build_sector_basis(part, 1)
    gen = build_generator(ChainSpec.make(part, gamma=0.2), b)
    diag = np.array([n * b.dim + n for n in range(b.dim)])
    # sum over diagonal rows of u vanishes: d/dt Tr rho = 0
    assert np.abs(gen.matrix[diag].sum(axis=0)).max() < 1e-14


def test_basis_partition_mismatch():
    b = build_sector_basis(ChainPartition.from_length(6), 1)
    spec = ChainSpec.make(ChainPartition.from_length(7))
    with pytest.raises(ModelError):
        build_hamiltonian(spec, b)
