"""Acceptance criteria at their stated tolerances.

Each test appends one PASS/FAIL line that the terminal summary prints. The full
run takes roughly a quarter of an hour on one core; set CHAINRESTORE_CI=1 to use
the reduced robustness sample count with the widened tolerance.
"""
import json
import os
import time

import numpy as np
import pytest
import yaml
from scipy.stats import unitary_group

from chainrestore.chain_model import ChainSpec, build_generator
from chainrestore.cli import main
from chainrestore.dilation import dilate, label_order, verify_dilation
from chainrestore.extraction import flip_and_measure, measure_extract, receiver_projector
from chainrestore.propagator import ClosedChain, evolve, expm_generator, find_t0
from chainrestore.restoring import ERLayout, KrausSet, RestoreProblem, apply_restore, solve_multistart, universality_check
from chainrestore.robustness import EPS_GRID, sweep_and_fit
from chainrestore.sector_basis import ChainPartition, build_sector_basis

from conftest import ACCEPTANCE_LINES, random_density

pytestmark = pytest.mark.acceptance

CI = os.environ.get("CHAINRESTORE_CI", "") not in ("", "0")
SEED = 20250101
N_STARTS = 3000
PST_STARTS = 50

# (label, N, profile, t0, lambda at t0)
CHAINS = [
    ("10", 10, "homogeneous", 12.222, 0.536),
    ("20", 20, "homogeneous", 23.224, 0.300),
    ("30", 30, "homogeneous", 33.928, 0.204),
    ("40", 40, "homogeneous", 44.496, 0.152),
    ("40_HFST", 40, "hfst", 56.656, 0.638),
]
SCAN_GAMMA0 = {1e-4: 0.0007, 1e-3: 0.006, 1e-2: 1.0, 1e-1: 1.35}
SCAN_BOUNDS = {1: [0.995, 0.985, 0.74, 0.36], 3: [0.995, 0.985, 0.58, 0.30]}
LENGTHS_GAMMA0 = {"10": 1.0, "20": 1.11, "30": 1.19, "40": 1.26, "40_HFST": 0.125}
LENGTHS_BOUNDS = {"10": 0.66, "20": 0.41, "30": 0.39, "40": 0.39, "40_HFST": 0.79}
N_K = {1: 16, 2: 12, 3: 16}
T1_T0 = 12.222


def report(name: str, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


class Chains:
    """Bases, t0 searches and propagators, computed once per session."""

    def __init__(self):
        self.ctx = {}
        self.props = {}

    def chain(self, label):
        if label not in self.ctx:
            _, N, profile, _, _ = next(c for c in CHAINS if c[0] == label)
            part = ChainPartition.from_length(N)
            basis = build_sector_basis(part, 1)
            spec = ChainSpec.make(part, profile)
            self.ctx[label] = (basis, spec, find_t0(spec, basis))
        return self.ctx[label]

    def propagator(self, label, gamma, t0=None):
        basis, spec, curve = self.chain(label)
        t = curve.t0 if t0 is None else t0
        key = (label, gamma, t)
        if key not in self.props:
            self.props[key] = expm_generator(build_generator(spec.with_gamma(gamma), basis), t, basis.sender_block)
        return self.props[key]


@pytest.fixture(scope="session")
def chains():
    return Chains()


@pytest.fixture(scope="session")
def solved():
    """Every solution produced by the table criteria, for the property checks."""
    return []


def solve(chains, solved, label, gamma, gamma0, variant, n_starts, t0=None):
    basis, _, _ = chains.chain(label)
    prop = chains.propagator(label, gamma, t0)
    problem = RestoreProblem.build(basis, prop.sender_columns, variant, N_K[variant], gamma0)
    sol = solve_multistart(problem, n_starts, SEED)
    solved.append((f"N={label} G={gamma:g} v{variant}", problem, sol, prop))
    return sol, problem, prop


# --------------------------------------------------------------------------


def test_criterion1_closed_chain_t0(chains):
    worst_t, worst_l, parts = 0.0, 0.0, []
    for label, _, _, t0, lam in CHAINS:
        curve = chains.chain(label)[2]
        worst_t = max(worst_t, abs(curve.t0 - t0))
        worst_l = max(worst_l, abs(curve.lambda0 - lam))
        parts.append(f"{label}:({curve.t0:.4f},{curve.lambda0:.4f})")
    report("1 closed-chain t0/lambda", worst_t <= 0.002 and worst_l <= 0.002,
           f"max |dt0| = {worst_t:.1e}, max |dlambda| = {worst_l:.1e}; " + " ".join(parts))


def test_criterion2_pst_limit(chains, solved):
    worst_nu, worst_L, worst_lam = 0.0, 0.0, 0.0
    for label, *_ in CHAINS:
        lam0 = chains.chain(label)[2].lambda0
        for variant in (1, 2, 3):
            sol, _, _ = solve(chains, solved, label, 0.0, 0.0, variant, PST_STARTS)
            worst_nu = max(worst_nu, sol.nu)
            worst_L = max(worst_L, abs(sol.Lambda - 1))
            worst_lam = max(worst_lam, abs(sol.lam - lam0), abs(sol.p - lam0))
    ok = worst_nu <= 1e-6 and worst_L <= 1e-6 and worst_lam <= 1e-3
    report("2 PST limit", ok,
           f"5 chains x 3 variants: max nu = {worst_nu:.1e}, max |Lambda-1| = {worst_L:.1e}, max |lambda-lambda0| = {worst_lam:.1e}")


@pytest.mark.parametrize("variant", [1, 3])
def test_criterion3_dephasing_scan(chains, solved, variant):
    got, times = [], []
    for gamma, gamma0 in SCAN_GAMMA0.items():
        start = time.perf_counter()
        sol, _, _ = solve(chains, solved, "10", gamma, gamma0, variant, N_STARTS, t0=T1_T0)
        times.append(time.perf_counter() - start)
        got.append(sol.Lambda)
    bounds = SCAN_BOUNDS[variant]
    ok = all(g >= b for g, b in zip(got, bounds)) and max(times) <= 600
    pairs = ", ".join(f"{g:.4f}>={b}" for g, b in zip(got, bounds))
    report(f"3 dephasing scan, variant {variant}", ok, f"{pairs}; slowest case {max(times):.0f} s")


def test_criterion4_chain_lengths(chains, solved):
    rho_s0 = np.outer([0.6, 0.8], [0.6, 0.8]).astype(complex)
    got, worst_p = {}, 0.0
    for label, *_ in CHAINS:
        sol, problem, prop = solve(chains, solved, label, 0.01, LENGTHS_GAMMA0[label], 2, N_STARTS)
        got[label] = sol.Lambda
        out = measure_extract(apply_restore(evolve(prop, rho_s0), sol.kraus, problem.basis, problem.layout), problem.basis)
        worst_p = max(worst_p, abs(sol.p - (sol.lam + 2 * sol.nu)), abs(out.p_success - sol.p))
    ok = all(got[k] >= LENGTHS_BOUNDS[k] for k in got) and worst_p <= 1e-9
    pairs = ", ".join(f"{k}:{got[k]:.4f}>={LENGTHS_BOUNDS[k]}" for k in got)
    report("4 chain lengths, variant 2", ok, f"{pairs}; max |p - (lambda + 2 nu)| = {worst_p:.1e}")


def test_criterion5_robustness(chains):
    n_samples, tol_T, tol_K = (200, 0.08, 0.08) if CI else (1000, 0.05, 0.03)
    basis, _, _ = chains.chain("10")
    prop = chains.propagator("10", 1e-4, T1_T0)
    problem = RestoreProblem.build(basis, prop.sender_columns, 1, 16, SCAN_GAMMA0[1e-4])
    sol = solve_multistart(problem, 200, SEED)
    fit = sweep_and_fit(sol.kraus, prop.sender_columns, basis, EPS_GRID, n_samples, SEED)
    kT, kK = fit.fit_T.slope, fit.fit_K.slope
    r2 = min(fit.fit_T.r_squared, fit.fit_K.r_squared)
    ok = abs(kT - 0.975) <= tol_T and abs(kK - 0.982) <= tol_K and r2 > 0.99 and len(fit.eps) == 15
    report("5 robustness slopes", ok,
           f"kappa_T = {kT:.4f}, kappa_K = {kK:.4f}, min R^2 = {r2:.6f} ({n_samples} samples x 15 eps)")


def test_criterion6_properties(chains, solved):
    rng = np.random.default_rng(SEED)
    checks = {}

    # trace preservation
    worst = 0.0
    for _ in range(50):
        N = int(rng.integers(5, 9))
        part = ChainPartition.from_length(N)
        b = build_sector_basis(part, int(rng.integers(1, 3)))
        spec = ChainSpec.make(part, gamma=rng.uniform(0, 0.5, N))
        prop = expm_generator(build_generator(spec, b), rng.uniform(0, 20), b.sender_block)
        rho = random_density(b.dim, rng)
        worst = max(worst, abs(np.trace((prop.U @ rho.reshape(-1)).reshape(b.dim, b.dim)) - 1))
    checks["trace"] = (worst < 1e-10, f"trace {worst:.1e}")

    # accepted solutions: completeness, Choi PSD, universality
    if not solved:
        basis, _, _ = chains.chain("10")
        prop = chains.propagator("10", 0.01, T1_T0)
        problem = RestoreProblem.build(basis, prop.sender_columns, 1, 16, 1.0)
        solved.append(("N=10 G=0.01 v1", problem, solve_multistart(problem, 100, SEED), prop))
    comp = max(s.kraus.completeness_error() for _, _, s, _ in solved)
    choi = min(s.kraus.restoring_map().min_choi_eigenvalue() for _, _, s, _ in solved)
    univ = max(universality_check(s, p, 100, SEED) for _, p, s, _ in solved)
    checks["completeness"] = (comp < 1e-9, f"completeness {comp:.1e}")
    checks["choi"] = (choi > -1e-9, f"min Choi eig {choi:.1e}")
    checks["universality"] = (univ < 1e-8, f"universality {univ:.1e} over {len(solved)} solutions")

    # dilation round trip on a realisable set
    layout = ERLayout.of(chains.chain("10")[0])
    M = 4
    ops = np.zeros((M * M, layout.d, layout.d), dtype=complex)
    for i, s in enumerate(layout.sectors):
        V4 = unitary_group.rvs(len(s) * M, random_state=i + 1).reshape(len(s), M, len(s), M)
        for p, (ne, ie) in enumerate(label_order(2)):
            ops[p][np.ix_(s, s)] = V4[:, ne, :, ie] / np.sqrt(M)
    kraus = KrausSet(ops, layout.sectors)
    dil = dilate(kraus)
    worst = 0.0
    for _ in range(20):
        a = rng.standard_normal((layout.d, layout.d)) + 1j * rng.standard_normal((layout.d, layout.d))
        worst = max(worst, verify_dilation(dil, kraus, a + a.conj().T))
    checks["dilation"] = (worst < 1e-9, f"dilation {worst:.1e}")

    # two measurement paths
    basis = chains.chain("10")[0]
    P = receiver_projector(basis)
    worst = 0.0
    for _ in range(20):
        rho = random_density(basis.dim, rng)
        branch, p = flip_and_measure(rho, P)
        out = measure_extract(rho, basis)
        R = basis.receiver_block
        worst = max(worst, abs(p - out.p_success), np.abs(branch[np.ix_(R, R)] / p - out.rho_out).max())
    checks["flip"] = (worst < 1e-12, f"flip paths {worst:.1e}")

    # dephasing decay with H = 0
    part = ChainPartition.from_length(6)
    b = build_sector_basis(part, 2)
    g, t = 0.21, 3.7
    prop = expm_generator(build_generator(ChainSpec.make(part, "explicit", gamma=g, matrix=np.zeros((6, 6))), b), t, b.sender_block)
    rho = random_density(b.dim, rng)
    out = (prop.U @ rho.reshape(-1)).reshape(b.dim, b.dim)
    d = np.array([[len(set(x) ^ set(y)) for y in b.states] for x in b.states])
    worst = np.abs(out - np.exp(-g * d * t / 2) * rho).max()
    checks["dephasing"] = (worst < 1e-10, f"dephasing {worst:.1e}")

    # solver against the closed-chain oracle
    basis, spec, curve = chains.chain("10")
    prop = chains.propagator("10", 0.0)
    lam_roots = np.linalg.svd(ClosedChain(spec, basis).vhat(curve.t0), compute_uv=False)[-1] ** 2
    pr = RestoreProblem.build(basis, prop.sender_columns, 2, 12, 0.0)
    lam_solver = solve_multistart(pr, PST_STARTS, SEED).lam
    checks["oracle"] = (abs(lam_solver - lam_roots) < 1e-4, f"|lambda_solver - lambda_roots| {abs(lam_solver - lam_roots):.1e}")

    ok = all(c[0] for c in checks.values())
    report("6 property suite", ok, "; ".join(c[1] for c in checks.values()))


def _numeric_outputs(out):
    vals = []
    for name in sorted(os.listdir(out)):
        path = os.path.join(out, name)
        if name.endswith(".csv"):
            for line in open(path):
                if not line.startswith("#"):
                    vals += [float(x) for x in line.strip().split(",") if _is_float(x)]
        elif name.endswith(".npz"):
            vals += list(np.load(path)["ops"].reshape(-1))
    return np.array(vals)


def _is_float(x):
    try:
        float(x)
        return True
    except ValueError:
        return False


def test_criterion7_determinism(tmp_path):
    cfg = {
        "name": "determinism",
        "chains": [{"label": "10", "N": 10, "t0": "search",
                    "cases": [{"gamma": 0.0}, {"gamma": 0.01, "gamma0": 1.0}]}],
        "restoring": {"variants": [1, 2], "N_K": 16, "n_starts": 60, "master_seed": SEED, "n_refine": 2},
        "robustness": {"enabled": True, "variant": 1, "gammas": [0.01], "n_samples": 10},
    }
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    dirs = {}
    for tag, threads in (("a", 1), ("b", 1), ("c", 2)):
        out = tmp_path / tag
        for cmd in ("t0", "solve"):
            assert main([cmd, "--config", str(path), "--out", str(out), "--threads", str(threads)]) == 0
        assert main(["perturb", "--config", str(path), "--out", str(out), "--threads", str(threads)]) == 0
        dirs[tag] = out
    files = sorted(f for f in os.listdir(dirs["a"]) if f.endswith((".csv", ".npz")))
    identical = all((dirs["a"] / f).read_bytes() == (dirs["b"] / f).read_bytes() for f in files
                    if f.endswith(".csv"))
    identical &= all(np.array_equal(np.load(dirs["a"] / f)["ops"], np.load(dirs["b"] / f)["ops"]) for f in files
                     if f.endswith(".npz"))
    a, c = _numeric_outputs(dirs["a"]), _numeric_outputs(dirs["c"])
    diff = float(np.abs(a - c).max()) if a.shape == c.shape else np.inf
    man = json.loads((dirs["a"] / "solve_manifest.json").read_text())
    ok = identical and diff <= 1e-12 and all(c["status"] == "ok" for c in man["cases"])
    report("7 determinism", ok, f"{len(files)} files bit-identical single-threaded: {identical}; max threaded difference {diff:.1e}")
