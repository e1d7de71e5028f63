"""Discrete-event M/G/1 FCFS simulation used as an empirical oracle.

Only arrival epochs are simulated; the backlog drains at unit rate in between.
Replications advance in lockstep inside fixed-size blocks. Each block draws
from its own Philox stream keyed by (seed, block index), so an estimate does
not depend on how blocks are spread across threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError
from .service_models import QueueSpec, stability_check

BLOCK = 4096
N_CHAINS = 32


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n: int

    def __post_init__(self):
        if self.stderr < 0:
            raise DomainError("standard error must be nonnegative")

    def ci(self, k: float = 3.0) -> tuple[float, float]:
        return self.mean - k * self.stderr, self.mean + k * self.stderr

    def contains(self, x: float, k: float = 3.0, slack: float = 0.0) -> bool:
        return abs(x - self.mean) <= k * self.stderr + slack

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n": self.n}


@dataclass
class SimConfig:
    spec: QueueSpec
    cost: Optional[Callable] = None
    seed: int = 0
    replications: int = 10_000
    threads: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise DomainError("replications must be >= 1")
        if self.cost is None:
            self.cost = lambda u: np.ones_like(np.asarray(u, dtype=float))


def block_rng(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), stream, block])))


def _blocks(n: int, size: int = BLOCK):
    out, start = [], 0
    while start < n:
        out.append((len(out), start, min(size, n - start)))
        start += size
    return out


def _run_blocks(cfg: SimConfig, fn, stream: int) -> np.ndarray:
    """Apply fn(rng, count) per block and concatenate in block order."""
    blocks = _blocks(cfg.replications)
    work = lambda b: fn(block_rng(cfg.seed, b[0], stream), b[2])
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            parts = list(ex.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    return np.concatenate(parts, axis=-1)


def _estimate(x: np.ndarray) -> Estimate:
    n = x.size
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Estimate(float(np.mean(x)), se, n)


# ---------------------------------------------------------------------------
# discharge cost
# ---------------------------------------------------------------------------


def _discharge_paths(spec: QueueSpec, cost, rng, count: int, u0: float, floor: float = 0.0):
    """Total cost, duration and arrival count while backlog falls from u0 to floor."""
    b = np.full(count, float(u0))
    total = np.zeros(count)
    T = np.zeros(count)
    N = np.zeros(count)
    active = np.flatnonzero(b > floor)
    while active.size:
        gap = rng.exponential(1.0 / spec.lam, active.size)
        svc = spec.model.sample(rng, active.size)
        room = b[active] - floor
        hit = gap < room
        done = active[~hit]
        T[done] += room[~hit]
        b[done] = floor
        go = active[hit]
        g = gap[hit]
        T[go] += g
        b[go] -= g
        total[go] += np.asarray(cost(b[go]), dtype=float)
        N[go] += 1
        b[go] += svc[hit]
        active = go
    return total, T, N


def sim_discharge_cost(cfg: SimConfig, u0: float) -> Estimate:
    """Estimate of w(u0): cost paid by arrivals until the backlog first empties."""
    stability_check(cfg.spec)
    if u0 < 0:
        raise DomainError("u0 must be nonnegative")
    if u0 == 0:
        return Estimate(0.0, 0.0, cfg.replications)
    x = _run_blocks(cfg, lambda rng, n: _discharge_paths(cfg.spec, cfg.cost, rng, n, u0)[0], stream=1)
    return _estimate(x)


def sim_discharge_difference(cfg: SimConfig, u: float, d: float) -> Estimate:
    """Estimate of w(u+d) - w(u) from paired paths on common random numbers."""
    stability_check(cfg.spec)

    def fn(rng, n):
        state = rng.bit_generator.state
        hi = _discharge_paths(cfg.spec, cfg.cost, rng, n, u + d)[0]
        rng.bit_generator.state = state
        lo = _discharge_paths(cfg.spec, cfg.cost, rng, n, u)[0] if u > 0 else np.zeros(n)
        return hi - lo

    return _estimate(_run_blocks(cfg, fn, stream=2))


def sim_admission_cost(cfg: SimConfig, u: float, d: float, jobs: int = 200_000) -> Estimate:
    """Estimate of w(u+d) - w(u) - lam d cbar/(1-rho)."""
    diff = sim_discharge_difference(cfg, u, d)
    cbar = sim_mean_cost(cfg, jobs=jobs)
    k = cfg.spec.lam * d / (1.0 - cfg.spec.rho)
    return Estimate(diff.mean - k * cbar.mean, math.hypot(diff.stderr, k * cbar.stderr), diff.n)


# ---------------------------------------------------------------------------
# busy periods
# ---------------------------------------------------------------------------


def sim_busy_period(cfg: SimConfig, u1: float, u2: float = 0.0) -> tuple[Estimate, Estimate]:
    """First passage from backlog u1 down to u2: (duration, number of arrivals)."""
    stability_check(cfg.spec)
    if not u1 >= u2 >= 0:
        raise DomainError("need u1 >= u2 >= 0")
    if u1 == u2:
        z = Estimate(0.0, 0.0, cfg.replications)
        return z, z

    def fn(rng, n):
        _, T, N = _discharge_paths(cfg.spec, cfg.cost, rng, n, u1, floor=u2)
        return np.stack([T, N])

    out = _run_blocks(cfg, fn, stream=4)
    return _estimate(out[0]), _estimate(out[1])


# ---------------------------------------------------------------------------
# stationary runs
# ---------------------------------------------------------------------------


def _stationary_waits(cfg: SimConfig, jobs: int, warmup: int) -> np.ndarray:
    """Waiting times, shape (N_CHAINS, jobs), from independent chains in lockstep."""
    spec = cfg.spec
    rng = block_rng(cfg.seed, 0, stream=5)
    per = int(math.ceil(jobs / N_CHAINS))
    W = np.zeros(N_CHAINS)
    out = np.empty((N_CHAINS, per))
    steps = warmup + per
    # draw in chunks to limit memory while keeping the draw order fixed
    chunk = 2048
    for s0 in range(0, steps, chunk):
        m = min(chunk, steps - s0)
        gaps = rng.exponential(1.0 / spec.lam, (m, N_CHAINS))
        svc = spec.model.sample(rng, (m, N_CHAINS))
        svc0 = spec.model0.sample(rng, (m, N_CHAINS)) if spec.has_setup else None
        for i in range(m):
            s = s0 + i
            if s >= warmup:
                out[:, s - warmup] = W
            d = svc[i] if svc0 is None else np.where(W == 0.0, svc0[i], svc[i])
            W = np.maximum(W + d - gaps[i], 0.0)
    return out


def _batch_estimate(x: np.ndarray) -> Estimate:
    """Each chain is one batch; stderr from the spread of chain means."""
    means = x.mean(axis=1)
    return Estimate(float(means.mean()), float(means.std(ddof=1) / math.sqrt(means.size)), x.size)


def sim_mean_cost(cfg: SimConfig, jobs: int = 200_000, warmup: int = 2_000) -> Estimate:
    """Long-run cost per job: c evaluated at each job's waiting time."""
    stability_check(cfg.spec)
    W = _stationary_waits(cfg, jobs, warmup)
    return _batch_estimate(np.asarray(cfg.cost(W), dtype=float).reshape(W.shape))


@dataclass(frozen=True)
class WaitingStats:
    mean: Estimate
    second: Estimate
    zero_fraction: Estimate
    grid: np.ndarray
    cdf: np.ndarray


def sim_waiting_stats(cfg: SimConfig, jobs: int = 200_000, warmup: int = 2_000, grid=None) -> WaitingStats:
    """E[W], E[W^2], P(W = 0) and the empirical CDF on a grid."""
    stability_check(cfg.spec)
    W = _stationary_waits(cfg, jobs, warmup)
    grid = np.linspace(0.0, 10.0, 41) if grid is None else np.asarray(grid, dtype=float)
    flat = np.sort(W.ravel())
    cdf = np.searchsorted(flat, grid, side="right") / flat.size
    return WaitingStats(_batch_estimate(W), _batch_estimate(W**2), _batch_estimate((W == 0.0).astype(float)), grid, cdf)
