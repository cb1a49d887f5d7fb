import numpy as np
import pytest

from chainrestore.chain_model import ChainSpec, build_generator
from chainrestore.propagator import expm_generator
from chainrestore.sector_basis import ChainPartition, build_sector_basis

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def chain10():
    part = ChainPartition.from_length(10)
    return part, build_sector_basis(part, 1)


@pytest.fixture(scope="session")
def small_problem_inputs():
    """N = 6 chain at gamma = 0.01, propagated to a fixed time."""
    part = ChainPartition.from_length(6)
    basis = build_sector_basis(part, 1)
    spec = ChainSpec.make(part, "homogeneous", gamma=0.01)
    prop = expm_generator(build_generator(spec, basis), 7.0, basis.sender_block)
    return basis, prop


def random_density(n, rng, rank=None):
    rank = rank or n
    a = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho)
