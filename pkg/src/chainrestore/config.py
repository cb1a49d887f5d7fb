"""Experiment configuration: YAML in, validated dataclasses out."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from math import comb
from pathlib import Path

import yaml

from .robustness import EPS_GRID
from .sector_basis import BasisError, ChainPartition, dimension_report


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Case:
    gamma: float
    gamma0: float


@dataclass(frozen=True)
class ChainConfig:
    label: str
    N: int
    profile: str = "homogeneous"
    t0: float | str = "search"
    cases: tuple[Case, ...] = ()


@dataclass(frozen=True)
class RestoringConfig:
    variants: tuple[int, ...] = (1,)
    N_K: int = 16
    n_starts: int = 3000
    master_seed: int = 0
    n_refine: int = 4


@dataclass(frozen=True)
class RobustnessConfig:
    enabled: bool = False
    variant: int = 1
    gammas: tuple[float, ...] = ()
    n_samples: int = 1000
    eps_grid: tuple[float, ...] = EPS_GRID


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    chains: tuple[ChainConfig, ...]
    k: int = 1
    n_S: int = 2
    n_R: int = 2
    n_A: int = 1
    restoring: RestoringConfig = field(default_factory=RestoringConfig)
    robustness: RobustnessConfig = field(default_factory=RobustnessConfig)
    sender_state: tuple[float, ...] = (0.6, 0.8)

    def partition(self, chain: ChainConfig) -> ChainPartition:
        return ChainPartition.from_length(chain.N, n_S=self.n_S, n_R=self.n_R, n_A=self.n_A)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, *, seed=None, n_starts=None, n_samples=None) -> "ExperimentConfig":
        r, b = self.restoring, self.robustness
        if seed is not None:
            r = RestoringConfig(r.variants, r.N_K, r.n_starts, int(seed), r.n_refine)
        if n_starts is not None:
            r = RestoringConfig(r.variants, r.N_K, int(n_starts), r.master_seed, r.n_refine)
        if n_samples is not None:
            b = RobustnessConfig(b.enabled, b.variant, b.gammas, int(n_samples), b.eps_grid)
        cfg = ExperimentConfig(self.name, self.chains, self.k, self.n_S, self.n_R, self.n_A, r, b, self.sender_state)
        validate(cfg)
        return cfg


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _chain(raw: dict) -> ChainConfig:
    _require(isinstance(raw, dict) and "N" in raw, "each chain needs at least N")
    t0 = raw.get("t0", "search")
    if t0 != "search":
        try:
            t0 = float(t0)
        except (TypeError, ValueError):
            raise ConfigError(f"t0 must be a number or 'search', got {t0!r}") from None
    cases = []
    for c in raw.get("cases", []):
        _require(isinstance(c, dict) and "gamma" in c, "each case needs gamma")
        cases.append(Case(float(c["gamma"]), float(c.get("gamma0", 0.0))))
    return ChainConfig(
        label=str(raw.get("label", raw["N"])),
        N=int(raw["N"]),
        profile=str(raw.get("profile", "homogeneous")),
        t0=t0,
        cases=tuple(cases),
    )


def from_dict(raw: dict) -> ExperimentConfig:
    _require(isinstance(raw, dict), "config must be a mapping")
    chains = raw.get("chains")
    if chains is None and "chain" in raw:
        chains = [raw["chain"]]
    _require(bool(chains), "config needs a 'chains' list")
    part = raw.get("partition", {})
    rs = raw.get("restoring", {})
    rb = raw.get("robustness", {})
    try:
        cfg = ExperimentConfig(
            name=str(raw.get("name", "experiment")),
            chains=tuple(_chain(c) for c in chains),
            k=int(raw.get("k", 1)),
            n_S=int(part.get("n_S", 2)),
            n_R=int(part.get("n_R", 2)),
            n_A=int(part.get("n_A", 1)),
            restoring=RestoringConfig(
                variants=tuple(int(v) for v in rs.get("variants", [1])),
                N_K=int(rs.get("N_K", 16)),
                n_starts=int(rs.get("n_starts", 3000)),
                master_seed=int(rs.get("master_seed", 0)),
                n_refine=int(rs.get("n_refine", 4)),
            ),
            robustness=RobustnessConfig(
                enabled=bool(rb.get("enabled", False)),
                variant=int(rb.get("variant", 1)),
                gammas=tuple(float(g) for g in rb.get("gammas", [])),
                n_samples=int(rb.get("n_samples", 1000)),
                eps_grid=tuple(float(e) for e in rb.get("eps_grid", EPS_GRID)),
            ),
            sender_state=tuple(float(a) for a in raw.get("sender_state", (0.6, 0.8))),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed config: {exc}") from exc
    validate(cfg)
    return cfg


def load(path: str | Path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return from_dict(raw)


def validate(cfg: ExperimentConfig) -> None:
    """Checks that need no numerics, including the dimension counting."""
    _require(cfg.k == 1, "only the one-excitation sector is supported by the restoring pipeline")
    r = cfg.restoring
    _require(all(v in (1, 2, 3) for v in r.variants) and r.variants, "variants must be drawn from 1, 2, 3")
    _require(r.N_K >= 1 and r.n_starts >= 1 and r.n_refine >= 0, "N_K and n_starts must be positive")
    b = cfg.robustness
    _require(b.n_samples >= 1 and all(e > 0 for e in b.eps_grid), "robustness needs positive samples and eps")
    for ch in cfg.chains:
        _require(ch.profile in ("homogeneous", "hfst"), f"unknown profile {ch.profile!r}")
        _require(ch.t0 == "search" or ch.t0 > 0, "t0 must be positive")
        for c in ch.cases:
            _require(c.gamma >= 0 and c.gamma0 >= 0, "gamma and gamma0 must be nonnegative")
        try:
            part = cfg.partition(ch)
        except BasisError as exc:
            raise ConfigError(str(exc)) from exc
        _require(part.n_TL >= part.n_A and part.n_TL >= 0, f"chain {ch.label} is too short for the partition")
        rep = dimension_report(part, cfg.k, r.N_K)
        _require(rep.proposition_ok, f"chain {ch.label}: extended receiver needs N_ER >= N_R + 1 (got {rep.N_ER})")
        _require(rep.sender_receiver_match, f"chain {ch.label}: sender and receiver dimensions differ")
        _require(rep.pareq_ok, f"chain {ch.label}: {rep.N_par} parameters cannot meet {rep.N_eq} conditions")
    n_s = comb(cfg.n_S, cfg.k)
    _require(len(cfg.sender_state) == n_s, f"sender_state needs {n_s} amplitudes")
    _require(any(cfg.sender_state), "sender_state must be nonzero")
