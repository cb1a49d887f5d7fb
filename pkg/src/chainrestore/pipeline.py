"""Stage runners behind the command line: t0 search, restoring solves, perturbation sweeps."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .chain_model import ChainSpec, build_generator
from .config import ChainConfig, ExperimentConfig
from .dilation import DilationError, dilate
from .extraction import measure_extract, output_fidelity
from .propagator import LambdaCurve, Propagator, evolve, expm_generator, find_t0
from .restoring import ERLayout, KrausSet, RestoreProblem, SolverFailure, apply_restore, solve_multistart, universality_check
from .robustness import sweep_and_fit
from .sector_basis import SectorBasis, build_sector_basis


def tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:  # pragma: no cover - running from a source tree
        return "0+unknown"


def header_lines(cfg: ExperimentConfig) -> list[str]:
    return [f"config_hash={cfg.digest()}", f"master_seed={cfg.restoring.master_seed}", f"tool_version={tool_version()}"]


def write_csv(path: Path, cfg: ExperimentConfig, columns: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines(cfg):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path: Path, cfg: ExperimentConfig, payload: dict) -> None:
    doc = {"config_hash": cfg.digest(), "master_seed": cfg.restoring.master_seed, "tool_version": tool_version()}
    doc.update(payload)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def case_tag(chain: ChainConfig, gamma: float, variant: int) -> str:
    return f"{chain.label}_g{gamma:g}_v{variant}"


@dataclass
class ChainContext:
    chain: ChainConfig
    basis: SectorBasis
    spec: ChainSpec
    t0: float
    curve: LambdaCurve | None

    def propagator(self, gamma: float) -> Propagator:
        spec = self.spec.with_gamma(gamma)
        return expm_generator(build_generator(spec, self.basis), self.t0, self.basis.sender_block)


def chain_context(cfg: ExperimentConfig, chain: ChainConfig, force_search: bool = False) -> ChainContext:
    part = cfg.partition(chain)
    basis = build_sector_basis(part, cfg.k)
    spec = ChainSpec.make(part, chain.profile, gamma=0.0)
    curve = None
    if chain.t0 == "search" or force_search:
        curve = find_t0(spec, basis)
    t0 = curve.t0 if chain.t0 == "search" else float(chain.t0)
    return ChainContext(chain, basis, spec, t0, curve)


def sender_density(cfg: ExperimentConfig) -> np.ndarray:
    psi = np.asarray(cfg.sender_state, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


# --------------------------------------------------------------------------


def run_t0(cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    started = time.perf_counter()
    for chain in cfg.chains:
        ctx = chain_context(cfg, chain, force_search=True)
        ctx.curve.to_csv(out / f"lambda_curve_{chain.label}.csv", header_lines(cfg))
        rows.append({"chain": chain.label, "N": chain.N, "profile": chain.profile, "t0": ctx.curve.t0, "lambda0": ctx.curve.lambda0})
    write_csv(out / "t0.csv", cfg, ["chain", "N", "profile", "t0", "lambda0"], [list(r.values()) for r in rows])
    manifest = {"config": cfg.to_dict(), "t0": rows, "timings": {"total_s": time.perf_counter() - started}}
    write_json(out / "t0_manifest.json", cfg, manifest)
    return manifest


SOLUTION_COLUMNS = [
    "chain", "N", "profile", "gamma", "gamma0", "variant", "t0", "lambda", "nu", "Lambda", "p", "a",
    "residual", "start_index", "p_success", "fidelity",
]


def run_solve(cfg: ExperimentConfig, out: Path, threads: int = 1) -> dict:
    """Best restoring solution per (chain, gamma, variant); failures are recorded, not raised."""
    out.mkdir(parents=True, exist_ok=True)
    rc = cfg.restoring
    rho_s0 = sender_density(cfg)
    cases, rows, timings = [], [], {}
    for chain in cfg.chains:
        ctx = chain_context(cfg, chain)
        for case in chain.cases:
            prop = ctx.propagator(case.gamma)
            for variant in rc.variants:
                tag = case_tag(chain, case.gamma, variant)
                t_start = time.perf_counter()
                gamma0 = case.gamma0 if case.gamma > 0 else 0.0
                problem = RestoreProblem.build(ctx.basis, prop.sender_columns, variant, rc.N_K, gamma0)
                entry = {"tag": tag, "chain": chain.label, "N": chain.N, "profile": chain.profile,
                         "gamma": case.gamma, "gamma0": gamma0, "variant": variant, "t0": ctx.t0}
                try:
                    sol = solve_multistart(problem, rc.n_starts, rc.master_seed, n_refine=rc.n_refine, threads=threads)
                except SolverFailure as exc:
                    entry.update({"status": "no_solution", "best_residual": exc.best_residual})
                    cases.append(entry)
                    timings[tag] = time.perf_counter() - t_start
                    continue
                rho_t = evolve(prop, rho_s0)
                outcome = measure_extract(apply_restore(rho_t, sol.kraus, ctx.basis, problem.layout), ctx.basis)
                fid = output_fidelity(outcome.rho_out, rho_s0)
                try:
                    dil = dilate(sol.kraus)
                    dil_info = {"feasible": True, "n_E": dil.n_E}
                except DilationError as exc:
                    sv = exc.singular_values
                    dil_info = {"feasible": False, "singular_value_min": float(sv.min()), "singular_value_max": float(sv.max())}
                kraus_file = f"kraus_{tag}.npz"
                np.savez(out / kraus_file, ops=sol.kraus.ops, config_hash=cfg.digest(), master_seed=rc.master_seed)
                entry.update({
                    "status": "ok",
                    **sol.summary(),
                    "p_success": outcome.p_success,
                    "fidelity": fid,
                    "rho_out": {"re": outcome.rho_out.real.tolist(), "im": outcome.rho_out.imag.tolist()},
                    "universality_deviation": universality_check(sol, problem, 100, rc.master_seed),
                    "dilation": dil_info,
                    "kraus_file": kraus_file,
                })
                cases.append(entry)
                rows.append([chain.label, chain.N, chain.profile, case.gamma, gamma0, variant, ctx.t0, sol.lam, sol.nu,
                             sol.Lambda, sol.p, sol.a, sol.residual, sol.start_index, outcome.p_success, fid])
                timings[tag] = time.perf_counter() - t_start
    write_csv(out / "solutions.csv", cfg, SOLUTION_COLUMNS, rows)
    manifest = {"config": cfg.to_dict(), "cases": cases, "timings": timings}
    write_json(out / "solve_manifest.json", cfg, manifest)
    return manifest


def run_perturb(cfg: ExperimentConfig, manifest: dict, manifest_dir: Path, out: Path) -> dict:
    """Sweeps for the cases selected by the robustness section; needs a solve manifest."""
    out.mkdir(parents=True, exist_ok=True)
    rb = cfg.robustness
    wanted = {(c["chain"], c["gamma"], c["variant"]): c for c in manifest.get("cases", [])}
    fits = []
    for chain in cfg.chains:
        ctx = None
        for gamma in rb.gammas:
            entry = wanted.get((chain.label, gamma, rb.variant))
            if entry is None or entry.get("status") != "ok":
                raise LookupError(f"no accepted solution for chain {chain.label}, gamma {gamma:g}, variant {rb.variant}")
            ctx = ctx or chain_context(cfg, chain)
            data = np.load(manifest_dir / entry["kraus_file"])
            kraus = KrausSet(data["ops"], ERLayout.of(ctx.basis).sectors)
            prop = ctx.propagator(gamma)
            fit = sweep_and_fit(kraus, prop.sender_columns, ctx.basis, rb.eps_grid, rb.n_samples, cfg.restoring.master_seed)
            tag = case_tag(chain, gamma, rb.variant)
            write_csv(out / f"sweep_{tag}.csv", cfg, ["epsilon", "mean_delta_T", "mean_delta_K"], fit.to_rows())
            fits.append({
                "tag": tag, "chain": chain.label, "gamma": gamma, "variant": rb.variant, "n_samples": fit.n_samples,
                "kappa_T": fit.fit_T.slope, "C_T": fit.fit_T.intercept, "r2_T": fit.fit_T.r_squared,
                "kappa_K": fit.fit_K.slope, "C_K": fit.fit_K.intercept, "r2_K": fit.fit_K.r_squared,
                "excluded_eps": list(fit.excluded),
            })
    write_csv(out / "fits.csv", cfg, ["tag", "kappa_T", "C_T", "r2_T", "kappa_K", "C_K", "r2_K"],
              [[f["tag"], f["kappa_T"], f["C_T"], f["r2_T"], f["kappa_K"], f["C_K"], f["r2_K"]] for f in fits])
    result = {"config": cfg.to_dict(), "fits": fits}
    write_json(out / "perturb_manifest.json", cfg, result)
    return result

