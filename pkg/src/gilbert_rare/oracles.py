"""Independent ground truth for the estimators.

Nothing here goes through :class:`GraphState`' incremental bookkeeping: graph
statistics are recomputed from dense distance matrices, components come from
scipy and cliques from networkx, so a bug in the fast path cannot certify
itself.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import mpmath
import networkx as nx
import numpy as np
from scipy.sparse.csgraph import connected_components

from .core import PoissonTable, RngStream, Window
from .estimators import TrialConfig
from .graph import EventKind, EventSpec, GraphState
from .grid import GridBlocker


class OracleMethod(str, enum.Enum):
    CLOSED_FORM = "closed_form"
    BRUTE_FORCE = "brute_force"


@dataclass(frozen=True)
class OracleResult:
    value: float
    method: OracleMethod
    trials: int = 0
    std_err: float = 0.0


# closed forms ------------------------------------------------------------------

def hard_sphere_pn_1d(lam: float, n: int) -> float:
    """P(n uniform points on [0, lam] have all gaps > 1) = ((lam - (n-1)) / lam)^n."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    if n <= 1:
        return 1.0
    free = lam - (n - 1)
    if free <= 0:
        return 0.0
    return float(mpmath.power(mpmath.mpf(free) / lam, n))


def hard_sphere_1d_exact(lam: float, beta: float, table: PoissonTable | None = None) -> OracleResult:
    """Exact ``P(no edge)`` for the Poisson(beta) Gilbert graph on ``[0, lam]``.

    The Poisson weights are evaluated in mpmath; ``table`` only supplies the
    truncation point so the comparison is against the same target as the
    estimators (the ignored tail is far below any test tolerance).
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    if not beta > 0:
        raise ValueError("beta must be positive")
    n_top = int(math.floor(lam)) + 1  # p_n = 0 beyond this
    if table is not None:
        n_top = min(n_top, table.n_max)
    with mpmath.workdps(40):
        b = mpmath.mpf(beta)
        total = mpmath.mpf(0)
        for n in range(n_top + 1):
            q = mpmath.exp(-b + n * mpmath.log(b) - mpmath.loggamma(n + 1))
            free = mpmath.mpf(lam) - (n - 1)
            pn = 1 if n <= 1 else (mpmath.power(free / lam, n) if free > 0 else 0)
            total += q * pn
    return OracleResult(float(total), OracleMethod.CLOSED_FORM)


def pairwise_distance_exact_2d(lam: float) -> float:
    """P(two uniform points in a side-``lam`` square are more than 1 apart), ``lam >= 1``."""
    if lam < 1:
        raise NotImplementedError("closed form only implemented for lam >= 1")
    return 1.0 - (math.pi / lam**2 - 8.0 / (3.0 * lam**3) + 1.0 / (2.0 * lam**4))


def poisson_mixture(beta: float, pn) -> float:
    """``sum_n q_n p_n`` with mpmath Poisson weights, for a finite sequence ``pn``."""
    with mpmath.workdps(40):
        b = mpmath.mpf(beta)
        return float(mpmath.fsum(
            mpmath.exp(-b + n * mpmath.log(b) - mpmath.loggamma(n + 1)) * p for n, p in enumerate(pn)))


# brute-force statistics -----------------------------------------------------------

def adjacency_matrix(points) -> np.ndarray:
    """Dense Gilbert adjacency (distance <= 1, no self loops)."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    diff = x[:, None, :] - x[None, :, :]
    a = np.einsum("ijk,ijk->ij", diff, diff) <= 1.0
    np.fill_diagonal(a, False)
    return a


def _max_clique(a: np.ndarray) -> int:
    if a.shape[0] == 0:
        return 0
    g = nx.from_numpy_array(a.astype(np.int8))
    return max(len(c) for c in nx.find_cliques(g))


def _max_component(a: np.ndarray) -> int:
    if a.shape[0] == 0:
        return 0
    _, labels = connected_components(a, directed=False)
    return int(np.bincount(labels).max())


def brute_force_statistics(points) -> dict[EventKind, int]:
    """All five statistics recomputed from scratch."""
    a = adjacency_matrix(points)
    n = a.shape[0]
    ai = a.astype(np.int64)
    return {
        EventKind.EDGE_COUNT: int(ai.sum() // 2),
        EventKind.MAX_DEGREE: int(ai.sum(axis=1).max()) if n else 0,
        EventKind.MAX_COMPONENT: _max_component(a),
        EventKind.MAX_CLIQUE: _max_clique(a),
        EventKind.TRIANGLE_COUNT: int(np.trace(ai @ ai @ ai) // 6),
    }


def _batch_statistic(x: np.ndarray, kind: EventKind) -> np.ndarray:
    """Statistic for each configuration in a ``(trials, n, d)`` batch."""
    diff = x[:, :, None, :] - x[:, None, :, :]
    a = np.einsum("tijk,tijk->tij", diff, diff) <= 1.0
    idx = np.arange(x.shape[1])
    a[:, idx, idx] = False
    ai = a.astype(np.int64)
    if kind is EventKind.EDGE_COUNT:
        return ai.sum(axis=(1, 2)) // 2
    if kind is EventKind.MAX_DEGREE:
        return ai.sum(axis=2).max(axis=1)
    if kind is EventKind.TRIANGLE_COUNT:
        return np.einsum("tii->t", ai @ ai @ ai) // 6
    if kind is EventKind.MAX_COMPONENT:
        return np.array([_max_component(m) for m in a])
    return np.array([_max_clique(m) for m in a])


def brute_force_pn(w: Window, spec: EventSpec, n: int, trials: int,
                   rng: np.random.Generator | RngStream) -> OracleResult:
    """Plain Monte Carlo estimate of ``p_n = P(X_n in A)`` for n uniform points."""
    if trials < 10_000:
        raise ValueError("brute force needs at least 10^4 trials")
    if n < 0:
        raise ValueError("n must be nonnegative")
    gen = rng.gen if isinstance(rng, RngStream) else rng
    if n <= 1:
        return OracleResult(1.0, OracleMethod.BRUTE_FORCE, trials, 0.0)
    hits = 0
    per_chunk = max(1, 4_000_000 // (n * n))
    done = 0
    while done < trials:
        t = min(per_chunk, trials - done)
        x = gen.random((t, n, w.d)) * w.lam
        hits += int(np.count_nonzero(_batch_statistic(x, spec.kind) <= spec.limit))
        done += t
    p = hits / trials
    return OracleResult(p, OracleMethod.BRUTE_FORCE, trials, math.sqrt(p * (1.0 - p) / trials))


# blocking soundness -------------------------------------------------------------------

def _stats_with_probes(pts: np.ndarray, probes: np.ndarray, kind: EventKind) -> np.ndarray:
    """Statistic of ``pts + {probe}`` for every probe, recomputed from distances."""
    a = adjacency_matrix(pts)
    ai = a.astype(np.int64)
    diff = probes[:, None, :] - pts[None, :, :]
    b = np.einsum("ijk,ijk->ij", diff, diff) <= 1.0  # probe-to-point adjacency
    bi = b.astype(np.int64)
    deg_p = bi.sum(axis=1)
    if kind is EventKind.EDGE_COUNT:
        return ai.sum() // 2 + deg_p
    if kind is EventKind.MAX_DEGREE:
        base = ai.sum(axis=1)
        return np.maximum(deg_p, (base[None, :] + bi).max(axis=1))
    if kind is EventKind.TRIANGLE_COUNT:
        base = np.trace(ai @ ai @ ai) // 6
        return base + np.einsum("pi,ij,pj->p", bi, ai, bi) // 2
    if kind is EventKind.MAX_COMPONENT:
        _, labels = connected_components(a, directed=False)
        sizes = np.bincount(labels)
        out = np.empty(len(probes), dtype=np.int64)
        for r in range(len(probes)):
            touched = np.unique(labels[b[r]])
            out[r] = max(int(sizes.max()), 1 + int(sizes[touched].sum()))
        return out
    base = _max_clique(a)
    out = np.empty(len(probes), dtype=np.int64)
    for r in range(len(probes)):
        nb = np.flatnonzero(b[r])
        out[r] = max(base, 1 + (_max_clique(a[np.ix_(nb, nb)]) if len(nb) else 0))
    return out


@dataclass
class SoundnessReport:
    violations: int
    probes: int
    states: int


def probe_blocking_soundness(cfg: TrialConfig, trials: int, probes_per_state: int,
                             rng: np.random.Generator, probe_prob: float = 0.5,
                             fault_rng: np.random.Generator | None = None) -> SoundnessReport:
    """Run importance-sampling trials and probe blocked cells for false blocks.

    After each insertion that leaves the state inside the event, with
    probability ``probe_prob`` we drop ``probes_per_state`` points uniformly
    into the blocked cells and count those whose addition keeps the
    configuration inside the event.
    """
    if cfg.grid_K is None:
        raise ValueError("soundness probes need grid_K")
    spec = cfg.event
    w = cfg.window
    grid = GridBlocker(w, cfg.grid_K, spec)
    grid.fault_rng = fault_rng
    violations = probes = states = 0
    for _ in range(trials):
        grid.reset()
        state = GraphState(spec)
        cap = cfg.fixed_n if cfg.fixed_n is not None else cfg.poisson.n_max
        for _n in range(cap):
            p = _draw_free(grid, rng)
            if p is None or not state.add_point(p).still_in_A:
                break
            grid.update(state, p)
            if grid.n_blocked == 0 or rng.random() >= probe_prob:
                continue
            blocked = np.flatnonzero(grid.blocked)
            picks = blocked[rng.integers(len(blocked), size=probes_per_state)]
            coords = np.stack(np.unravel_index(picks, (grid.K,) * grid.d), axis=1)
            pr = (coords + rng.random(coords.shape)) * grid.h
            pts = np.asarray(state.points, dtype=float)
            stat = _stats_with_probes(pts, pr, spec.kind)
            violations += int(np.count_nonzero(stat <= spec.limit))
            probes += probes_per_state
            states += 1
    return SoundnessReport(violations, probes, states)


def _draw_free(grid: GridBlocker, rng: np.random.Generator):
    if grid.n_free == 0:
        return None
    flat = int(grid.free[rng.integers(grid.n_free)])
    cell = np.array(np.unravel_index(flat, (grid.K,) * grid.d))
    return tuple(((cell + rng.random(grid.d)) * grid.h).tolist())


def check_table(table: PoissonTable) -> list[str]:
    """Table invariants plus an mpmath spot check of a few pmf entries."""
    problems = table.validate()
    with mpmath.workdps(30):
        b = mpmath.mpf(table.beta)
        for n in sorted({0, int(table.beta), table.n_max // 2, table.n_max}):
            ref = float(-b + n * mpmath.log(b) - mpmath.loggamma(n + 1))
            if abs(table.log_pmf[n] - ref) > 1e-9 * max(1.0, abs(ref)):
                problems.append(f"log pmf at n={n} is {table.log_pmf[n]!r}, expected {ref!r}")
    return problems
