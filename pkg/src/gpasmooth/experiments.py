"""Seeded Monte Carlo replications behind the ``bench`` command.

Replication ``b`` of a run seeded ``s`` uses seed ``s + b``; that seed spawns
independent streams for the training sample, the test sample, the partition
and the pilot draw, so every replication is reproducible on its own.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bandwidth import DEFAULT_CANDIDATES, DEFAULT_CH, WeightFn
from .cluster import (Cluster, CostLedger, Strategy, partition_random, partition_sorted, run_bandwidth,
                      run_predict, run_train, thread_cap)
from .gpa import Grid, design_grid
from .kernels import KernelSpec
from .synthdata import SimSetting, generate, optimal_bandwidth, rmse

__all__ = [
    "RmseConfig",
    "MraeConfig",
    "ColumnSummary",
    "streams",
    "stream_seed",
    "rmse_replication",
    "mrae_replication",
    "run_rmse_bench",
    "run_mrae_bench",
    "summarize",
]

COLUMNS = ("global", "oneshot", "gpa")


def streams(seed: int, count: int = 4):
    """Independent generators (train, test, partition, pilot) for one replication."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def stream_seed(rng):
    return int(rng.integers(2**63 - 1))


@dataclass(frozen=True)
class RmseConfig:
    setting: SimSetting
    kernel: KernelSpec
    N: int
    N_star: int
    M: int
    partition: str = "random"
    bandwidth: str | float = "oracle"  # "oracle", "oneshot", "pilot" or a fixed value
    J: int | None = None  # overrides the multiplier rule when given
    multiplier: float = 1.0
    nu: int = 1
    delta: float = 0.05
    n0: int | None = None
    c_h: float = DEFAULT_CH
    strategies: tuple = COLUMNS


@dataclass(frozen=True)
class MraeConfig:
    setting: SimSetting
    kernel: KernelSpec
    N: int
    M: int
    n0: int
    delta: float = 0.05
    c_h: float = DEFAULT_CH
    candidates: int = DEFAULT_CANDIDATES


@dataclass
class ColumnSummary:
    """Mean and standard error over the replications that produced a number."""

    mean: float
    se: float
    n_runs: int
    n_na: int

    @property
    def na(self) -> bool:
        return self.n_runs == 0

    def as_dict(self) -> dict:
        return {"mean": None if self.na else self.mean, "se": None if self.na else self.se,
                "runs": self.n_runs, "na_runs": self.n_na}


def summarize(values) -> ColumnSummary:
    v = np.asarray(values, dtype=float)
    ok = v[~np.isnan(v)]
    if ok.size == 0:
        return ColumnSummary(math.nan, math.nan, 0, int(v.size))
    se = float(ok.std(ddof=1) / math.sqrt(ok.size)) if ok.size > 1 else 0.0
    return ColumnSummary(float(ok.mean()), se, int(ok.size), int(v.size - ok.size))


def _partition(sample, M, how, rng):
    if how == "random":
        return partition_random(sample, M, stream_seed(rng))
    if how == "sorted":
        return partition_sorted(sample, M)
    raise ValueError(f"unknown partition strategy {how!r}")


def _bandwidth(cfg, cluster, weight, pilot_rng, ledger):
    if isinstance(cfg.bandwidth, (int, float)) and not isinstance(cfg.bandwidth, bool):
        return float(cfg.bandwidth)
    if cfg.bandwidth == "oracle":
        return optimal_bandwidth(cfg.setting, cfg.kernel, cfg.N, weight)
    if cfg.bandwidth in ("oneshot", "pilot"):
        h, led = run_bandwidth(cfg.bandwidth, cluster, cfg.kernel, weight, n0=cfg.n0,
                               seed=stream_seed(pilot_rng), c_h=cfg.c_h)
        ledger += led
        return h
    raise ValueError(f"unknown bandwidth method {cfg.bandwidth!r}")


def rmse_replication(cfg: RmseConfig, seed: int):
    """One replication: per-strategy RMSE against the true mean, plus the ledger.

    A strategy whose prediction vector holds any Undefined entry scores NaN
    (reported as NA).
    """
    r_train, r_test, r_part, r_pilot = streams(seed)
    data = generate(cfg.setting, cfg.N, seed=stream_seed(r_train))
    test = generate(cfg.setting, cfg.N_star, seed=stream_seed(r_test))
    weight = WeightFn(cfg.delta)
    cluster = Cluster(data.sample, _partition(data.sample, cfg.M, cfg.partition, r_part), threads=1)
    ledger = CostLedger()
    h = _bandwidth(cfg, cluster, weight, r_pilot, ledger)
    lo, hi = cfg.setting.covariate_law.support
    grid = Grid(lo, hi, cfg.J) if cfg.J is not None else design_grid(cfg.N, h, (lo, hi), cfg.multiplier)
    out = {"h": h, "J": grid.J}
    q = test.sample.x1
    for name in cfg.strategies:
        strategy = Strategy(name)
        if strategy is Strategy.GPA:
            artifact, led = run_train(strategy, cluster, cfg.kernel, h, grid, nu=cfg.nu)
        else:
            artifact, led = run_train(strategy, cluster, cfg.kernel, h)
        ledger += led
        pred, led = run_predict(strategy, artifact, q, cfg.kernel, h)
        ledger += led
        out[name] = math.nan if np.isnan(pred).any() else rmse(pred, test.truth)
    return out, ledger


def mrae_replication(cfg: MraeConfig, seed: int, h_ref: float | None = None):
    """Relative absolute errors of the one-shot and pilot CV bandwidths."""
    r_train, _, r_part, r_pilot = streams(seed)
    data = generate(cfg.setting, cfg.N, seed=stream_seed(r_train))
    weight = WeightFn(cfg.delta)
    h_ref = optimal_bandwidth(cfg.setting, cfg.kernel, cfg.N, weight) if h_ref is None else h_ref
    cluster = Cluster(data.sample, partition_random(data.sample, cfg.M, stream_seed(r_part)), threads=1)
    h_os, led_os = run_bandwidth("oneshot", cluster, cfg.kernel, weight, c_h=cfg.c_h, count=cfg.candidates)
    h_plt, led_plt = run_bandwidth("pilot", cluster, cfg.kernel, weight, n0=cfg.n0, seed=stream_seed(r_pilot),
                                   c_h=cfg.c_h, count=cfg.candidates)
    led_os += led_plt
    return {"h_os": h_os, "h_plt": h_plt, "h_ref": h_ref,
            "oneshot": abs(h_os - h_ref) / h_ref, "pilot": abs(h_plt - h_ref) / h_ref}, led_os


def _replicate(fn, B, seed, threads):
    if B < 1:
        raise ValueError("B must be at least 1")
    seeds = [seed + b for b in range(B)]
    threads = thread_cap() if threads is None else max(1, threads)
    if threads == 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, seeds))


@dataclass
class BenchResult:
    kind: str
    config: dict
    columns: dict
    runs: list = field(default_factory=list)
    ledger: CostLedger | None = None

    def as_dict(self) -> dict:
        return {"kind": self.kind, "config": self.config,
                "columns": {k: v.as_dict() for k, v in self.columns.items()},
                "ledger": self.ledger.as_flat_dict() if self.ledger else {}}


def run_rmse_bench(cfg: RmseConfig, B: int, seed: int = 0, threads: int | None = None) -> BenchResult:
    runs = _replicate(lambda s: rmse_replication(cfg, s), B, seed, threads)
    ledger = CostLedger()
    for _, led in runs:
        ledger += led
    cols = {name: summarize([r[name] for r, _ in runs]) for name in cfg.strategies}
    return BenchResult("rmse", _describe(cfg, B, seed), cols, [r for r, _ in runs], ledger)


def run_mrae_bench(cfg: MraeConfig, B: int, seed: int = 0, threads: int | None = None) -> BenchResult:
    h_ref = optimal_bandwidth(cfg.setting, cfg.kernel, cfg.N, WeightFn(cfg.delta))
    runs = _replicate(lambda s: mrae_replication(cfg, s, h_ref), B, seed, threads)
    ledger = CostLedger()
    for _, led in runs:
        ledger += led
    cols = {name: summarize([r[name] for r, _ in runs]) for name in ("oneshot", "pilot")}
    return BenchResult("mrae", _describe(cfg, B, seed), cols, [r for r, _ in runs], ledger)


def _describe(cfg, B, seed):
    out = {"B": B, "seed": seed}
    for k, v in cfg.__dict__.items():
        if isinstance(v, SimSetting):
            out[k] = v.name
            out["sigma"] = v.sigma
        elif isinstance(v, KernelSpec):
            out[k] = v.name
        elif isinstance(v, tuple):
            out[k] = list(v)
        else:
            out[k] = v
    return out
