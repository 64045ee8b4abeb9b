"""Window geometry, Poisson tables, unit-ball volumes and per-trial random streams."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

# Keeps a table's working arrays comfortably inside memory.
MAX_TABLE_LENGTH = 50_000_000

# Stream ids with this bit set belong to the oracles, never to estimator trials.
ORACLE_STREAM_BIT = 1 << 63

_MASK64 = (1 << 64) - 1


class CapacityError(OverflowError):
    """Raised when a Poisson table would need more entries than we allow."""


@dataclass(frozen=True)
class Window:
    """The sampling cube ``[0, lam]^d``."""

    d: int
    lam: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d!r}")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"side length must be positive and finite, got {self.lam!r}")

    def volume(self) -> float:
        return float(self.lam) ** self.d

    def contains(self, p) -> bool:
        return len(p) == self.d and all(0.0 <= x <= self.lam for x in p)


def intensity_to_beta(kappa: float, w: Window) -> float:
    """Expected number of Poisson points in the window, ``kappa * lam^d``."""
    if not kappa > 0:
        raise ValueError(f"intensity must be positive, got {kappa!r}")
    return kappa * w.volume()


def unit_ball_volume(d: int) -> float:
    """Volume of the unit Euclidean ball in ``R^d``."""
    if int(d) != d or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    return math.exp(0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1.0))


@dataclass(frozen=True)
class PoissonTable:
    """pmf and cdf of ``Poi(beta)`` on ``0..n_max``.

    ``tail_bound`` is an upper bound on the mass above ``n_max`` that every
    estimator ignores.
    """

    beta: float
    log_pmf: np.ndarray
    pmf: np.ndarray
    cdf: np.ndarray
    n_max: int
    tail_bound: float
    _cdf_list: list = field(repr=False, compare=False, default_factory=list)

    def draw(self, u: float) -> int:
        """Invert the cdf at ``u`` in [0, 1); values past ``cdf[n_max]`` clamp to ``n_max``."""
        return min(bisect.bisect_right(self._cdf_list, u), self.n_max)

    def F(self, n: int) -> float:
        """Poisson cdf at ``n`` (saturating at ``cdf[n_max]``)."""
        if n < 0:
            return 0.0
        return float(self.cdf[min(n, self.n_max)])

    def validate(self) -> list[str]:
        """Return a list of violated table invariants (empty when healthy)."""
        problems = []
        if len(self.log_pmf) != self.n_max + 1 or len(self.cdf) != self.n_max + 1:
            problems.append("array lengths disagree with n_max")
            return problems
        if np.any(np.diff(self.cdf) < 0):
            problems.append("cdf is not nondecreasing")
        if not (1.0 - self.tail_bound <= self.cdf[-1] <= 1.0):
            problems.append("cdf[n_max] outside [1 - tail_bound, 1]")
        mass = math.fsum(np.exp(self.log_pmf))
        if not (1.0 - 1e-16 <= mass <= 1.0 + 1e-12):
            problems.append(f"total mass {mass!r} outside [1 - 1e-16, 1 + 1e-12]")
        steps = np.diff(self.cdf, prepend=0.0)
        if np.max(np.abs(steps - np.exp(self.log_pmf))) > 1e-14:
            problems.append("cdf increments disagree with pmf")
        return problems


def _log_pmf_from_mode(beta: float, n_hi: int) -> np.ndarray:
    # log q_k - log q_{k-1} = -log1p((k - beta) / beta); accumulate both ways from the mode
    # in extended precision so the tails keep their relative accuracy.
    LD = np.longdouble
    b = LD(beta)
    mode = min(int(math.floor(beta)), n_hi)
    lp = np.empty(n_hi + 1, dtype=LD)
    lp[mode] = -b + mode * np.log(b) - LD(math.lgamma(mode + 1))
    k = np.arange(mode + 1, n_hi + 1, dtype=LD)
    lp[mode + 1:] = lp[mode] - np.cumsum(np.log1p((k - b) / b))
    if mode > 0:
        k = np.arange(mode, 0, -1, dtype=LD)
        lp[mode - 1::-1] = lp[mode] + np.cumsum(np.log1p((k - b) / b))
    return lp.astype(np.float64)


def make_poisson_table(beta: float, tail_eps: float = 1e-16) -> PoissonTable:
    """Build the truncated ``Poi(beta)`` table.

    ``n_max`` is the smallest n whose upper-tail mass drops below ``tail_eps``.
    """
    if not (beta > 0 and math.isfinite(beta)):
        raise ValueError(f"beta must be positive and finite, got {beta!r}")
    if not 0 < tail_eps <= 1e-12:
        raise ValueError(f"tail_eps must lie in (0, 1e-12], got {tail_eps!r}")
    n_hi = int(beta + 40.0 * math.sqrt(beta) + 60.0)
    if n_hi > MAX_TABLE_LENGTH:
        raise CapacityError(f"beta={beta:g} needs about {n_hi} table entries")

    lp = _log_pmf_from_mode(beta, n_hi)
    lp -= math.log(math.fsum(np.exp(lp)))
    pmf = np.exp(lp)
    upper = np.cumsum(pmf[::-1])[::-1]           # upper[n] = P(N >= n)
    tail_above = np.append(upper[1:], 0.0)        # P(N > n)
    n_max = int(np.argmax(tail_above < tail_eps))
    # Chernoff bound on whatever lies past n_hi.
    chernoff = math.exp(-beta + n_hi * (1.0 + math.log(beta / n_hi)))
    tail = float(tail_above[n_max]) + chernoff

    lp = lp[: n_max + 1].copy()
    # Nudge the largest term so the table's own mass is at least 1 - tail.
    j = int(np.argmax(lp))
    for _ in range(64):
        deficit = math.fsum([1.0, -tail, *(-np.exp(lp))])
        if deficit <= 0.0:
            break
        lp[j] += deficit / math.exp(lp[j])
        lp[j] = np.nextafter(lp[j], np.inf)
    pmf = np.exp(lp)

    # Lower half by forward sums, upper half by 1 - (accurate upper tail).
    upper = np.cumsum(pmf[::-1])[::-1]
    tail_above = np.append(upper[1:], 0.0) + tail
    cdf = np.cumsum(pmf)
    split = min(int(math.floor(beta)), n_max)
    cdf[split:] = 1.0 - tail_above[split:]
    cdf = np.minimum(np.maximum.accumulate(cdf), 1.0)
    cdf.flags.writeable = False
    lp.flags.writeable = False
    pmf.flags.writeable = False
    return PoissonTable(beta=float(beta), log_pmf=lp, pmf=pmf, cdf=cdf, n_max=n_max,
                        tail_bound=tail, _cdf_list=cdf.tolist())


class RngStream:
    """Counter-based random stream keyed by ``(base_seed, stream_id)``.

    Backed by a Philox generator whose 128-bit key packs both integers, so any
    trial can be replayed in isolation and streams never overlap.
    """

    __slots__ = ("base_seed", "stream_id", "gen")

    def __init__(self, base_seed: int, stream_id: int):
        if not (0 <= base_seed <= _MASK64 and 0 <= stream_id <= _MASK64):
            raise ValueError("base_seed and stream_id must be 64-bit unsigned integers")
        self.base_seed = int(base_seed)
        self.stream_id = int(stream_id)
        self.gen = np.random.Generator(np.random.Philox(key=(self.base_seed << 64) | self.stream_id))

    @classmethod
    def oracle(cls, base_seed: int, stream_id: int) -> "RngStream":
        return cls(base_seed, (stream_id & (ORACLE_STREAM_BIT - 1)) | ORACLE_STREAM_BIT)

    def uniform(self) -> float:
        return self.gen.random()

    def uniforms(self, k: int) -> list[float]:
        return self.gen.random(k).tolist()

    def __repr__(self):
        return f"RngStream(base_seed={self.base_seed}, stream_id={self.stream_id})"


def sample_uniform_point(w: Window, rng: RngStream) -> tuple[float, ...]:
    lam = w.lam
    return tuple(lam * u for u in rng.uniforms(w.d))
