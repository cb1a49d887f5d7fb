"""Command line front end.

    chainrestore t0 --config run.yaml --out results/
    chainrestore solve --config run.yaml --seed 7 --threads 4 --out results/
    chainrestore perturb --config run.yaml --manifest results/solve_manifest.json --out results/
    chainrestore reproduce-paper --out results/

Exit codes: 0 success, 2 configuration error, 3 a case found no accepted
solution, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib.resources import files
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import pipeline
from .chain_model import ModelError
from .extraction import MeasurementFailure
from .propagator import DensityMatrixError, PropagationError
from .restoring import ChannelError
from .robustness import PerturbationError

EXIT_OK, EXIT_CONFIG, EXIT_NO_SOLUTION, EXIT_NUMERICAL = 0, 2, 3, 4
BUNDLED_CONFIGS = ("table1", "table2")

log = logging.getLogger("chainrestore")


def _load(args) -> config_mod.ExperimentConfig:
    cfg = config_mod.load(args.config)
    return cfg.with_overrides(seed=args.seed, n_starts=getattr(args, "starts", None), n_samples=getattr(args, "samples", None))


def _solve_status(manifest: dict) -> int:
    failed = [c["tag"] for c in manifest["cases"] if c["status"] != "ok"]
    if failed:
        log.error("no accepted solution for %s", ", ".join(failed))
        return EXIT_NO_SOLUTION
    return EXIT_OK


def cmd_t0(args) -> int:
    cfg = _load(args)
    man = pipeline.run_t0(cfg, Path(args.out))
    for row in man["t0"]:
        print(f"{row['chain']}: t0 = {row['t0']:.6f}  lambda = {row['lambda0']:.6f}")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _load(args)
    man = pipeline.run_solve(cfg, Path(args.out), threads=args.threads)
    for c in man["cases"]:
        if c["status"] == "ok":
            print(f"{c['tag']}: Lambda = {c['Lambda']:.6f}  p = {c['p']:.6f}  lambda = {c['lambda']:.6f}  nu = {c['nu']:.3e}")
        else:
            print(f"{c['tag']}: no accepted solution (best residual {c['best_residual']:.3e})")
    return _solve_status(man)


def cmd_perturb(args) -> int:
    cfg = _load(args)
    mpath = Path(args.manifest) if args.manifest else Path(args.out) / "solve_manifest.json"
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise config_mod.ConfigError(f"cannot read solve manifest: {exc}") from exc
    try:
        res = pipeline.run_perturb(cfg, manifest, mpath.parent, Path(args.out))
    except LookupError as exc:
        log.error("%s", exc)
        return EXIT_NO_SOLUTION
    for f in res["fits"]:
        print(f"{f['tag']}: kappa_T = {f['kappa_T']:.4f}  C_T = {f['C_T']:.4f}  kappa_K = {f['kappa_K']:.4f}  C_K = {f['C_K']:.4f}")
    return EXIT_OK


def bundled_config(name: str) -> Path:
    return Path(str(files("chainrestore") / "configs" / f"{name}.yaml"))


def cmd_reproduce(args) -> int:
    status = EXIT_OK
    for name in BUNDLED_CONFIGS:
        out = Path(args.out) / name
        ns = argparse.Namespace(**vars(args))
        ns.config, ns.out, ns.manifest = bundled_config(name), out, None
        print(f"== {name}")
        cfg = _load(ns)
        if any(ch.t0 == "search" for ch in cfg.chains):
            cmd_t0(ns)
        code = cmd_solve(ns)
        status = max(status, code)
        if cfg.robustness.enabled and code == EXIT_OK:
            status = max(status, cmd_perturb(ns))
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chainrestore", description="Restoring channels for state transfer along dephasing spin chains.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="YAML experiment file")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes for the multistart solver")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--starts", type=int, default=None, help="override the number of solver starts")
        p.add_argument("--samples", type=int, default=None, help="override perturbation samples per eps")

    common(sub.add_parser("t0", help="closed-chain lambda curve and its first maximum"))
    common(sub.add_parser("solve", help="multistart restoring solves"))
    p = sub.add_parser("perturb", help="perturbation sweeps of solved Kraus sets")
    common(p)
    p.add_argument("--manifest", default=None, help="solve manifest (default OUT/solve_manifest.json)")
    common(sub.add_parser("reproduce-paper", help="run the bundled table configurations"), needs_config=False)
    return ap


COMMANDS = {"t0": cmd_t0, "solve": cmd_solve, "perturb": cmd_perturb, "reproduce-paper": cmd_reproduce}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        log.error("--threads must be at least 1")
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (config_mod.ConfigError, ModelError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (PropagationError, DensityMatrixError, ChannelError, MeasurementFailure, PerturbationError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
