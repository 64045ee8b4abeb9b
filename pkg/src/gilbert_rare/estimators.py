"""Naive, conditional and importance-sampling estimators of ``P(X in A)``.

Every trial reads its randomness from ``RngStream(base_seed, trial_index)``.
The first uniform of a stream is always the naive estimator's Poisson draw
(the other estimators discard it), so naive and conditional trials with the
same index see exactly the same point sequence.
"""

from __future__ import annotations

import enum
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import PoissonTable, RngStream, Window, intensity_to_beta, make_poisson_table, sample_uniform_point
from .graph import EventSpec, GraphState
from .grid import GridBlocker


class Estimator(str, enum.Enum):
    NMC = "nmc"
    CMC = "cmc"
    IS = "is"


@dataclass(frozen=True)
class TrialConfig:
    window: Window
    kappa: float
    event: EventSpec
    grid_K: int | None = None
    poisson: PoissonTable | None = None
    fixed_n: int | None = None

    def __post_init__(self):
        beta = intensity_to_beta(self.kappa, self.window)
        if self.poisson is None:
            object.__setattr__(self, "poisson", make_poisson_table(beta))
        elif not math.isclose(self.poisson.beta, beta, rel_tol=1e-12):
            raise ValueError("Poisson table rate does not match kappa * lam^d")
        if self.grid_K is not None and (int(self.grid_K) != self.grid_K or self.grid_K < 1):
            raise ValueError(f"grid_K must be a positive integer, got {self.grid_K!r}")
        if self.fixed_n is not None and self.fixed_n < 0:
            raise ValueError("fixed_n must be nonnegative")

    @property
    def beta(self) -> float:
        return self.poisson.beta

    def cache_key(self):
        return (self.window, self.kappa, self.event, self.grid_K)


@dataclass
class TrialOutcome:
    value: float
    points_generated: int
    l_trace: list[float] | None = None
    blocked_volume_trace: list[float] | None = None


def run_nmc_trial(cfg: TrialConfig, rng: RngStream) -> TrialOutcome:
    u = rng.uniform()
    n_points = cfg.fixed_n if cfg.fixed_n is not None else cfg.poisson.draw(u)
    state = GraphState(cfg.event)
    w = cfg.window
    for n in range(n_points):
        if not state.add_point(sample_uniform_point(w, rng)).still_in_A:
            return TrialOutcome(0.0, n + 1)
    return TrialOutcome(1.0, n_points)


def run_cmc_trial(cfg: TrialConfig, rng: RngStream) -> TrialOutcome:
    rng.uniform()  # slot of the naive Poisson draw
    state = GraphState(cfg.event)
    w = cfg.window
    cap = cfg.fixed_n if cfg.fixed_n is not None else cfg.poisson.n_max
    m = 0
    while m < cap:
        if not state.add_point(sample_uniform_point(w, rng)).still_in_A:
            break
        m += 1
    if cfg.fixed_n is not None:
        return TrialOutcome(1.0 if m >= cfg.fixed_n else 0.0, m)
    return TrialOutcome(cfg.poisson.F(m), m)


_BLOCKERS: dict = {}


def _blocker(cfg: TrialConfig) -> GridBlocker:
    key = cfg.cache_key()
    b = _BLOCKERS.get(key)
    if b is None:
        if len(_BLOCKERS) > 8:
            _BLOCKERS.clear()
        b = _BLOCKERS[key] = GridBlocker(cfg.window, cfg.grid_K, cfg.event)
    else:
        b.reset()
    return b


def run_is_trial(cfg: TrialConfig, rng: RngStream, record: bool = False,
                 blocker: GridBlocker | None = None) -> TrialOutcome:
    """One pass of the grid importance sampler.

    Returns ``sum_i q_i L_i`` over the prefixes that stayed inside the event.
    With ``record`` the outcome carries the likelihood and blocked-volume traces.
    """
    if cfg.grid_K is None:
        raise ValueError("importance sampling needs grid_K")
    rng.uniform()  # slot of the naive Poisson draw
    grid = blocker if blocker is not None else _blocker(cfg)
    state = GraphState(cfg.event)
    fixed = cfg.fixed_n
    q = cfg.poisson.pmf
    cap = fixed if fixed is not None else cfg.poisson.n_max
    L = 1.0
    value = float(q[0]) if fixed is None else (1.0 if fixed == 0 else 0.0)
    trace = [1.0] if record else None
    n = 0
    while n < cap:
        L *= grid.likelihood_factor()
        p = grid.sample_free_point(rng)
        if p is None:
            break
        n += 1
        if not state.add_point(p).still_in_A:
            break
        if trace is not None:
            trace.append(L)
        if fixed is None:
            value += q[n] * L
        elif n == fixed:
            value = L
        grid.update(state, p)
    vols = list(grid.blocked_volume_trace) if record else None
    return TrialOutcome(float(value), n, trace, vols)


TRIALS = {Estimator.NMC: run_nmc_trial, Estimator.CMC: run_cmc_trial, Estimator.IS: run_is_trial}


def run_trials(cfg: TrialConfig, estimator: Estimator, base_seed: int, start: int, stop: int) -> np.ndarray:
    trial = TRIALS[Estimator(estimator)]
    return np.array([trial(cfg, RngStream(base_seed, i)).value for i in range(start, stop)])


def relative_variance(values) -> float:
    """``mean(y^2) / mean(y)^2 - 1``; NaN when the mean is zero."""
    y = np.asarray(values, dtype=float)
    if y.size == 0:
        raise ValueError("need at least one sample")
    m1 = math.fsum(y) / y.size
    if m1 == 0.0:
        return math.nan
    m2 = math.fsum(y * y) / y.size
    return m2 / (m1 * m1) - 1.0


def relative_variance_se(values) -> float:
    """Delta-method standard error of :func:`relative_variance`."""
    y = np.asarray(values, dtype=float)
    m1 = math.fsum(y) / y.size
    if m1 == 0.0:
        return math.nan
    z = y / m1  # rv is scale-free; work with y / mean
    z2 = z * z
    m2 = math.fsum(z2) / y.size
    infl = (z2 - m2) - 2.0 * m2 * (z - 1.0)
    return float(np.std(infl) / math.sqrt(y.size))


@dataclass
class EstimateReport:
    estimator: Estimator
    mean: float
    rv: float
    m: int
    half_width_95: float
    seed: int
    status: str
    rv_se: float = math.nan
    target_rv_of_mean: float = math.nan
    tail_bound: float = 0.0
    wall_ms: float = 0.0
    values: np.ndarray | None = field(default=None, repr=False)

    @property
    def std_err(self) -> float:
        if self.status == "no-hit":
            return math.nan
        return self.mean * math.sqrt(max(self.rv, 0.0) / self.m)

    @property
    def ci_low(self) -> float:
        if self.status == "no-hit":
            return 0.0
        return max(self.mean - self.half_width_95, 0.0)

    @property
    def ci_high(self) -> float:
        if self.status == "no-hit":
            return self.half_width_95
        return self.mean + self.half_width_95

    @property
    def bias_note(self) -> str:
        return f"Poisson truncation ignores mass <= {self.tail_bound:.3e}"


def worker_count() -> int:
    env = os.environ.get("GILBERT_RARE_THREADS")
    if env:
        return max(1, int(env))
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return os.cpu_count() or 1


class _Runner:
    """Runs index ranges of trials, serially or across worker processes."""

    def __init__(self, workers: int):
        self.workers = workers
        self.pool = ProcessPoolExecutor(workers) if workers > 1 else None

    def __call__(self, cfg, estimator, seed, start, stop) -> np.ndarray:
        if self.pool is None or stop - start < 2 * self.workers:
            return run_trials(cfg, estimator, seed, start, stop)
        edges = np.linspace(start, stop, self.workers + 1).astype(int)
        futures = [self.pool.submit(run_trials, cfg, estimator, seed, int(a), int(b))
                   for a, b in zip(edges[:-1], edges[1:])]
        return np.concatenate([f.result() for f in futures])

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def estimate(cfg: TrialConfig, estimator: Estimator | str, target_rv_of_mean: float = 1e-3,
             m_min: int = 1000, m_max: int = 10_000_000, base_seed: int = 0,
             batch_size: int = 1000, workers: int | None = None,
             keep_values: bool = False, max_seconds: float | None = None) -> EstimateReport:
    """Sample until the estimated relative variance of the mean, ``rv / m``,
    falls to ``target_rv_of_mean`` or ``m_max`` trials have run.

    ``max_seconds`` optionally caps wall time; the run then ends with status
    ``"budget"`` after the batch in flight.
    """
    estimator = Estimator(estimator)
    if not target_rv_of_mean > 0:
        raise ValueError("target_rv_of_mean must be positive")
    if m_min < 100 or m_max < m_min:
        raise ValueError("need 100 <= m_min <= m_max")
    runner = _Runner(workers or worker_count())
    t0 = time.perf_counter()
    chunks: list[np.ndarray] = []
    s1: list[float] = []
    s2: list[float] = []
    m = 0
    status = "m_max"
    try:
        step = m_min
        while True:
            step = min(step, m_max - m)
            vals = runner(cfg, estimator, base_seed, m, m + step)
            chunks.append(vals)
            s1.append(math.fsum(vals))
            s2.append(math.fsum(vals * vals))
            m += step
            mean = math.fsum(s1) / m
            rv = (math.fsum(s2) / m) / mean ** 2 - 1.0 if mean > 0 else math.nan
            if mean > 0 and rv / m <= target_rv_of_mean:
                status = "converged"
                break
            if m >= m_max:
                break
            if max_seconds is not None and time.perf_counter() - t0 > max_seconds:
                status = "budget"
                break
            step = batch_size
            if mean > 0:
                need = math.ceil(rv / target_rv_of_mean) - m
                step = min(batch_size, max(100, need))
    finally:
        runner.close()
    values = np.concatenate(chunks)
    mean = math.fsum(values) / m
    if mean == 0.0:
        status = "no-hit"
        rv = math.nan
        rv_se = math.nan
        half = 1.0 - 0.05 ** (1.0 / m)  # one-sided 95% upper bound on p
    else:
        rv = relative_variance(values)
        rv_se = relative_variance_se(values)
        half = 1.96 * mean * math.sqrt(max(rv, 0.0) / m)
    return EstimateReport(
        estimator=estimator, mean=mean, rv=rv, m=m, half_width_95=half, seed=base_seed,
        status=status, rv_se=rv_se, target_rv_of_mean=target_rv_of_mean,
        tail_bound=cfg.poisson.tail_bound, wall_ms=1000.0 * (time.perf_counter() - t0),
        values=values if keep_values else None,
    )
