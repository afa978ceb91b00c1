"""In-process simulated cluster with protocol-level cost accounting.

Workers hold immutable shards. The coordinator drives three estimation
strategies (moment-assembled global NW, one-shot averaging, grid point
approximation) and two bandwidth selectors. "Communication" is counted in
scalars crossing the worker/coordinator boundary, not bytes.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np

from .bandwidth import CandidateSet, WeightFn, minimize_cv, oneshot_bandwidth, pilot_bandwidth
from .gpa import Grid, GpaModel, MultiGrid, fit_grid
from .kernels import KernelSpec
from .moments import MomentStats, Sample, local_moments, merge_all, nw_from_stats, oneshot_combine

__all__ = [
    "PartitionStrategy",
    "PartitionPlan",
    "PhaseCost",
    "CostLedger",
    "Strategy",
    "BandwidthStrategy",
    "Worker",
    "Cluster",
    "partition_random",
    "partition_sorted",
    "pilot_draw",
    "run_train",
    "run_predict",
    "run_bandwidth",
    "thread_cap",
]

PHASES = ("train", "bandwidth", "predict")


def thread_cap() -> int:
    """Worker-pool size from ``GPA_THREADS`` (default 1: sequential)."""
    try:
        return max(1, int(os.environ.get("GPA_THREADS", "1")))
    except ValueError:
        return 1


class PartitionStrategy(Enum):
    RANDOM = "random"
    SORTED = "sorted"


class Strategy(Enum):
    GLOBAL = "global"
    ONESHOT = "oneshot"
    GPA = "gpa"


class BandwidthStrategy(Enum):
    ONESHOT_CV = "oneshot"
    PILOT_CV = "pilot"


@dataclass(frozen=True, eq=False)
class PartitionPlan:
    """Machine id per sample index."""

    M: int
    assignment: np.ndarray
    strategy: PartitionStrategy

    def __post_init__(self):
        asg = np.asarray(self.assignment, dtype=np.int64)
        if asg.ndim != 1 or asg.size == 0:
            raise ValueError("assignment must be a nonempty vector")
        if asg.min() < 0 or asg.max() >= self.M:
            raise ValueError("assignment refers to a machine outside 0..M-1")
        asg.setflags(write=False)
        object.__setattr__(self, "assignment", asg)

    @property
    def N(self) -> int:
        return self.assignment.size

    def shard_indices(self, m: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == m)

    def shards(self) -> list:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.searchsorted(self.assignment[order], np.arange(self.M + 1))
        return [order[bounds[m]:bounds[m + 1]] for m in range(self.M)]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.M)


def _balanced_blocks(N, M):
    return (np.arange(N, dtype=np.int64) * M) // N


def _sample_size(sample_or_n):
    return sample_or_n if isinstance(sample_or_n, (int, np.integer)) else len(sample_or_n)


def partition_random(sample, M: int, seed) -> PartitionPlan:
    """Random balanced split: shard sizes differ by at most one."""
    N = _sample_size(sample)
    if M < 1 or M > N:
        raise ValueError(f"need 1 <= M <= N, got M={M}, N={N}")
    perm = np.random.default_rng(seed).permutation(N)
    asg = np.empty(N, dtype=np.int64)
    asg[perm] = _balanced_blocks(N, M)
    return PartitionPlan(M, asg, PartitionStrategy.RANDOM)


def partition_sorted(sample: Sample, M: int) -> PartitionPlan:
    """Contiguous blocks of the covariate order statistics; ties keep index order."""
    N = sample.n
    if M < 1 or M > N:
        raise ValueError(f"need 1 <= M <= N, got M={M}, N={N}")
    order = np.argsort(sample.x[:, 0], kind="stable")
    asg = np.empty(N, dtype=np.int64)
    asg[order] = _balanced_blocks(N, M)
    return PartitionPlan(M, asg, PartitionStrategy.SORTED)


def pilot_quotas(M: int, n0: int) -> np.ndarray:
    """``n0 // M`` per machine, remainder handed out round-robin from machine 0."""
    quotas = np.full(M, n0 // M, dtype=np.int64)
    quotas[: n0 % M] += 1
    return quotas


def pilot_draw(plan: PartitionPlan, sample: Sample, n0: int, seed) -> Sample:
    """Union of per-machine simple random samples without replacement."""
    return sample.take(_pilot_indices(plan, n0, seed))


def _pilot_indices(plan, n0, seed):
    if n0 > plan.N:
        raise ValueError(f"pilot size {n0} exceeds the sample size {plan.N}")
    if n0 < plan.M:
        raise ValueError(f"pilot size {n0} is smaller than the machine count {plan.M}")
    rng = np.random.default_rng(seed)
    quotas = pilot_quotas(plan.M, n0)
    picked = []
    for m, idx in enumerate(plan.shards()):
        if quotas[m] > idx.size:
            raise ValueError(f"machine {m} holds {idx.size} rows but its pilot quota is {quotas[m]}")
        picked.append(rng.choice(idx, size=int(quotas[m]), replace=False))
    return np.concatenate(picked)


@dataclass
class PhaseCost:
    """Counters for one protocol phase."""

    values_sent_to_coordinator: int = 0
    values_broadcast_to_workers: int = 0
    worker_flops_proxy: int = 0
    coordinator_flops_proxy: int = 0
    round_trips: int = 0
    per_worker_sent: dict = field(default_factory=dict)
    seconds: float = 0.0

    def send(self, worker: int, count: int) -> None:
        self.values_sent_to_coordinator += int(count)
        self.per_worker_sent[worker] = self.per_worker_sent.get(worker, 0) + int(count)

    def __iadd__(self, other: "PhaseCost"):
        for f in fields(self):
            if f.name == "per_worker_sent":
                for w, c in other.per_worker_sent.items():
                    self.per_worker_sent[w] = self.per_worker_sent.get(w, 0) + c
            else:
                setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    @property
    def communication(self) -> int:
        return self.values_sent_to_coordinator + self.values_broadcast_to_workers + self.round_trips


@dataclass
class CostLedger:
    phases: dict = field(default_factory=lambda: {p: PhaseCost() for p in PHASES})

    def __getitem__(self, phase: str) -> PhaseCost:
        return self.phases[phase]

    def __iadd__(self, other: "CostLedger"):
        for name, cost in other.phases.items():
            self.phases.setdefault(name, PhaseCost())
            self.phases[name] += cost
        return self

    def as_flat_dict(self, include_timing: bool = False) -> dict:
        out = {}
        for phase, cost in self.phases.items():
            for f in fields(cost):
                if f.name == "per_worker_sent" or (f.name == "seconds" and not include_timing):
                    continue
                out[f"{phase}.{f.name}"] = getattr(cost, f.name)
        return out

    def report(self, include_timing: bool = False) -> str:
        return "\n".join(f"{k}={v}" for k, v in self.as_flat_dict(include_timing).items())


class Worker:
    """One machine: an immutable shard plus the local computations it answers."""

    def __init__(self, wid: int, shard: Sample):
        self.wid = wid
        self.shard = shard.sorted() if shard.p == 1 else shard

    @property
    def n(self) -> int:
        return self.shard.n

    def moments(self, points, kernel: KernelSpec, h: float) -> MomentStats:
        return local_moments(self.shard, points, kernel, h)

    def local_estimates(self, points, kernel: KernelSpec, h: float):
        stats = self.moments(points, kernel, h)
        return nw_from_stats(stats), int(stats.count.sum())

    def select_bandwidth(self, kernel: KernelSpec, weight: WeightFn, c_h: float, count: int, rate: float) -> float:
        return minimize_cv(self.shard, CandidateSet(self.n, c_h, count, rate), kernel, weight)


class Cluster:
    """Workers built from a sample and a partition plan."""

    def __init__(self, sample: Sample, plan: PartitionPlan, threads: int | None = None):
        if plan.N != sample.n:
            raise ValueError("partition plan does not match the sample size")
        self.sample = sample
        self.plan = plan
        self.workers = [Worker(m, sample.take(idx)) for m, idx in enumerate(plan.shards())]
        self.threads = thread_cap() if threads is None else max(1, threads)

    @property
    def M(self) -> int:
        return self.plan.M

    @property
    def N(self) -> int:
        return self.sample.n

    def map(self, fn):
        """Apply ``fn`` to every worker; results come back in worker order."""
        if self.threads == 1:
            return [fn(w) for w in self.workers]
        with ThreadPoolExecutor(self.threads) as pool:
            return list(pool.map(fn, self.workers))


def run_train(strategy, cluster: Cluster, kernel: KernelSpec, h: float, grid: Grid | MultiGrid | None = None,
              nu: int = 1):
    """Training phase. Returns ``(artifact, ledger)``.

    GPA: every worker sends ``2 (J + 1)`` moment sums (``2 |grid|`` in p
    dimensions) and the coordinator fits a :class:`GpaModel`. The other
    strategies defer all work to prediction and return the cluster itself.
    """
    strategy = Strategy(strategy)
    ledger = CostLedger()
    cost = ledger["train"]
    start = time.perf_counter()
    if strategy is Strategy.GPA:
        if grid is None:
            raise ValueError("GPA training needs a grid")
        # (lo, hi, J) is agreed up front, so nothing is broadcast
        pts = grid.points
        parts = cluster.map(lambda w: w.moments(pts, kernel, h))
        for w, st in zip(cluster.workers, parts):
            cost.send(w.wid, 2 * len(st))
            cost.worker_flops_proxy += int(st.count.sum())
        cost.round_trips += 1
        stats = merge_all(parts)
        cost.coordinator_flops_proxy += 2 * len(stats) * (cluster.M - 1) + len(stats)
        artifact = fit_grid(stats, grid, h, kernel, nu, meta={"M": cluster.M})
    else:
        if grid is not None:
            raise ValueError(f"{strategy.value} training takes no grid")
        artifact = cluster
    cost.seconds += time.perf_counter() - start
    return artifact, ledger


def run_predict(strategy, artifact, queries, kernel: KernelSpec | None = None, h: float | None = None,
                oneshot_policy: str = "strict", nu: int | None = None):
    """Prediction phase. Returns ``(predictions, ledger)``.

    GLOBAL and ONESHOT need the cluster as ``artifact`` and run one broadcast
    and gather round per query. GPA needs a fitted model and interpolates on
    the coordinator alone.
    """
    strategy = Strategy(strategy)
    ledger = CostLedger()
    cost = ledger["predict"]
    start = time.perf_counter()
    q = np.asarray(queries, dtype=float)
    nq = q.shape[0] if q.ndim else 1
    if strategy is Strategy.GPA:
        if not isinstance(artifact, GpaModel):
            raise TypeError("GPA prediction needs a fitted GpaModel")
        pred = artifact.predict(q, nu) if artifact.p == 1 else artifact.predict(q)
        cost.coordinator_flops_proxy += nq * (artifact.nu + 1 if artifact.p == 1 else artifact.p + 1)
    else:
        if not isinstance(artifact, Cluster):
            raise TypeError(f"{strategy.value} prediction needs the cluster")
        if kernel is None or h is None:
            raise ValueError(f"{strategy.value} prediction needs the kernel and bandwidth")
        cluster = artifact
        p = cluster.sample.p
        cost.values_broadcast_to_workers += nq * p * cluster.M
        cost.round_trips += nq
        if strategy is Strategy.GLOBAL:
            parts = cluster.map(lambda w: w.moments(q, kernel, h))
            for w, st in zip(cluster.workers, parts):
                cost.send(w.wid, 2 * len(st))
                cost.worker_flops_proxy += int(st.count.sum())
            pred = nw_from_stats(merge_all(parts))
            cost.coordinator_flops_proxy += nq * (2 * cluster.M + 1)
        else:
            parts = cluster.map(lambda w: w.local_estimates(q, kernel, h))
            for w, (est, flops) in zip(cluster.workers, parts):
                cost.send(w.wid, est.size)
                cost.worker_flops_proxy += flops
            pred = oneshot_combine(np.stack([est for est, _ in parts]), oneshot_policy)
            pred = np.atleast_1d(pred)
            cost.coordinator_flops_proxy += nq * cluster.M
    cost.seconds += time.perf_counter() - start
    return pred, ledger


def run_bandwidth(strategy, cluster: Cluster, kernel: KernelSpec, weight: WeightFn | None = None, *,
                  n0: int | None = None, seed=None, c_h: float | None = None, count: int | None = None,
                  rate: float = 0.2):
    """Distributed bandwidth selection. Returns ``(h, ledger)``.

    ONESHOT_CV: each worker runs CV on its shard and sends one scalar.
    PILOT_CV: workers send their pilot rows (``p + 1`` scalars each) and the
    coordinator runs CV on the pooled pilot sample.
    """
    from .bandwidth import DEFAULT_CANDIDATES, DEFAULT_CH

    strategy = BandwidthStrategy(strategy)
    weight = WeightFn() if weight is None else weight
    c_h = DEFAULT_CH if c_h is None else c_h
    count = DEFAULT_CANDIDATES if count is None else count
    ledger = CostLedger()
    cost = ledger["bandwidth"]
    start = time.perf_counter()
    cost.round_trips += 1
    if strategy is BandwidthStrategy.ONESHOT_CV:
        local = cluster.map(lambda w: w.select_bandwidth(kernel, weight, c_h, count, rate))
        for w in cluster.workers:
            cost.send(w.wid, 1)
            cost.worker_flops_proxy += count * w.n * w.n
        h = oneshot_bandwidth(local, cluster.M, rate)
    else:
        if n0 is None:
            raise ValueError("pilot selection needs n0")
        idx = _pilot_indices(cluster.plan, n0, seed)
        asg = cluster.plan.assignment[idx]
        width = cluster.sample.p + 1
        for m in range(cluster.M):
            cost.send(m, width * int(np.sum(asg == m)))
        pilot = cluster.sample.take(idx)
        h = pilot_bandwidth(pilot, cluster.N, kernel, weight, CandidateSet(n0, c_h, count, rate), rate)
        cost.coordinator_flops_proxy += count * n0 * n0
    cost.seconds += time.perf_counter() - start
    return h, ledger
