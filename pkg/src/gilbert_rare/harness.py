"""Experiment configs, table and regime runners, report writers and the verification suite.

Config files are flat ``key = value`` text.  Blank lines and anything after
``#`` are ignored, list values are comma separated, and keys are case
insensitive.  ``kappa`` and ``ell`` lists are zipped; a single value is
broadcast against the other list.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import oracles
from .core import RngStream, Window, make_poisson_table
from .estimators import (Estimator, EstimateReport, TrialConfig, estimate, relative_variance,
                         run_cmc_trial, run_is_trial, run_nmc_trial)
from .graph import EventKind, EventSpec
from .grid import GridBlocker

# Targets looser than this get the "relaxed" marker in reports.
STRICT_TARGET = 1e-3

REPORT_COLUMNS = ["name", "d", "lam", "kappa", "beta", "event", "ell", "estimator", "grid",
                  "mean", "rv", "rv_se", "m", "ci_low", "ci_high", "wall_ms", "seed",
                  "status", "relaxed"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


# parsing -------------------------------------------------------------------------

def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key.lower()] = value
    return out


def load_config(path: str | Path, overrides: list[str] | None = None) -> dict[str, str]:
    raw = parse_config_text(Path(path).read_text(encoding="utf-8"))
    return apply_overrides(raw, overrides or [])


def apply_overrides(raw: dict[str, str], overrides: list[str]) -> dict[str, str]:
    raw = dict(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like KEY=VALUE")
        k, v = item.split("=", 1)
        raw[k.strip().lower()] = v.strip()
    return raw


def _split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _num(raw, key, cast, default=None, check=None, why=""):
    if key not in raw:
        if default is None:
            raise ConfigError(f"{key}: missing required field")
        return default
    try:
        val = cast(raw[key])
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw[key]!r} as {cast.__name__}") from None
    if check is not None and not check(val):
        raise ConfigError(f"{key}: {raw[key]!r} {why}")
    return val


def _num_list(raw, key, cast, default=None, check=None, why=""):
    if key not in raw:
        if default is None:
            raise ConfigError(f"{key}: missing required field")
        return list(default)
    items = _split(raw[key])
    try:
        vals = [cast(v) for v in items]
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw[key]!r} as a list of {cast.__name__}") from None
    if check is not None:
        for v in vals:
            if not check(v):
                raise ConfigError(f"{key}: value {v!r} {why}")
    return vals


def _int(text: str) -> int:
    f = float(text)
    if f != int(f):
        raise ValueError(text)
    return int(f)


def _event(raw) -> EventKind:
    try:
        return EventKind.parse(raw.get("event", "edge_count"))
    except ValueError:
        raise ConfigError(f"event: unknown event kind {raw.get('event')!r}") from None


def _estimators(raw, default) -> list[Estimator]:
    names = _split(raw.get("estimators", default))
    if not names:
        raise ConfigError("estimators: estimator set is empty")
    try:
        return [Estimator(n.lower()) for n in names]
    except ValueError:
        raise ConfigError(f"estimators: unknown estimator in {raw.get('estimators')!r}") from None


def _zip_params(kappas, ells):
    if len(kappas) > 1 and len(ells) > 1 and len(kappas) != len(ells):
        raise ConfigError(f"kappa/ell: list lengths {len(kappas)} and {len(ells)} cannot be zipped")
    n = max(len(kappas), len(ells))
    widen = (lambda xs: xs * n if len(xs) == 1 else xs)
    return list(zip(widen(kappas), widen(ells)))


_COMMON_KEYS = {"name", "d", "lam", "kappa", "event", "ell", "estimators", "grids",
                "target_rv_of_mean", "m_min", "m_max", "batch_size", "base_seed", "output",
                "max_seconds", "workers"}
_REGIME_KEYS = _COMMON_KEYS | {"regime", "delta", "betas", "grid_per_unit"}


@dataclass
class ExperimentConfig:
    window: Window
    params: list[tuple[float, int]]
    event: EventKind
    estimators: list[Estimator]
    grids: list[int] = field(default_factory=list)
    target_rv_of_mean: float = 1e-3
    m_min: int = 1000
    m_max: int = 10_000_000
    batch_size: int = 1000
    base_seed: int = 0
    output: str | None = None
    name: str = "experiment"
    max_seconds: float | None = None
    workers: int | None = None

    @property
    def relaxed(self) -> bool:
        return self.target_rv_of_mean > STRICT_TARGET

    @classmethod
    def from_raw(cls, raw: dict[str, str]) -> "ExperimentConfig":
        unknown = set(raw) - _COMMON_KEYS
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown key")
        d = _num(raw, "d", _int, 2, lambda v: v >= 1, "must be a positive integer")
        lam = _num(raw, "lam", float, None, lambda v: v > 0 and math.isfinite(v), "must be positive")
        kappas = _num_list(raw, "kappa", float, None, lambda v: v > 0, "must be positive")
        ells = _num_list(raw, "ell", _int, [0], lambda v: v >= 0, "must be a nonnegative integer")
        ests = _estimators(raw, "nmc,cmc,is")
        grids = _num_list(raw, "grids", _int, [], lambda v: v >= 1, "must be a positive integer")
        if Estimator.IS in ests and not grids:
            raise ConfigError("grids: importance sampling needs at least one grid size")
        cfg = cls(window=Window(d, lam), params=_zip_params(kappas, ells), event=_event(raw),
                  estimators=ests, grids=grids, **_run_fields(raw))
        return cfg


def _run_fields(raw) -> dict:
    m_min = _num(raw, "m_min", _int, 1000, lambda v: v >= 100, "must be at least 100")
    m_max = _num(raw, "m_max", _int, 10_000_000, lambda v: v >= m_min, "must be at least m_min")
    return dict(
        target_rv_of_mean=_num(raw, "target_rv_of_mean", float, 1e-3, lambda v: v > 0, "must be positive"),
        m_min=m_min, m_max=m_max,
        batch_size=_num(raw, "batch_size", _int, 1000, lambda v: v >= 1, "must be positive"),
        base_seed=_num(raw, "base_seed", _int, 0, lambda v: 0 <= v < 2**64, "must fit in 64 bits"),
        output=raw.get("output") or None,
        name=raw.get("name", "experiment"),
        max_seconds=(_num(raw, "max_seconds", float, None, lambda v: v > 0, "must be positive")
                     if "max_seconds" in raw else None),
        workers=(_num(raw, "workers", _int, None, lambda v: v >= 1, "must be positive")
                 if "workers" in raw else None),
    )


@dataclass
class RegimeConfig:
    regime: str
    d: int
    event: EventKind
    ell: int
    estimators: list[Estimator]
    points: list[tuple[Window, float, int]]  # (window, kappa, grid K)
    target_rv_of_mean: float = 1e-3
    m_min: int = 1000
    m_max: int = 10_000_000
    batch_size: int = 1000
    base_seed: int = 0
    output: str | None = None
    name: str = "regime"
    max_seconds: float | None = None
    workers: int | None = None
    delta: float | None = None
    betas: list[float] | None = None

    @property
    def relaxed(self) -> bool:
        return self.target_rv_of_mean > STRICT_TARGET

    @classmethod
    def from_raw(cls, raw: dict[str, str]) -> "RegimeConfig":
        unknown = set(raw) - _REGIME_KEYS
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown key")
        regime = raw.get("regime", "").strip().lower()
        d = _num(raw, "d", _int, 2, lambda v: v >= 1, "must be a positive integer")
        ell = _num(raw, "ell", _int, 0, lambda v: v >= 0, "must be a nonnegative integer")
        ests = _estimators(raw, "cmc,is")
        delta = betas = None
        if regime == "fixed_window_kappa_sweep":
            lam = _num(raw, "lam", float, None, lambda v: v > 0, "must be positive")
            kappas = _num_list(raw, "kappa", float, None, lambda v: v > 0, "must be positive")
            grids = _num_list(raw, "grids", _int, [int(math.ceil(10 * lam))], lambda v: v >= 1,
                              "must be a positive integer")
            if len(grids) != 1:
                raise ConfigError("grids: a kappa sweep uses a single grid size")
            points = [(Window(d, lam), k, grids[0]) for k in kappas]
        elif regime == "growing_window":
            delta = _num(raw, "delta", float, None, lambda v: 1 < v < 2,
                         "must satisfy 1 < delta < 2 (outside this range the event is not rare)")
            betas = _num_list(raw, "betas", float, None, lambda v: v > 0, "must be positive")
            per_unit = _num(raw, "grid_per_unit", float, 10.0, lambda v: v >= 2, "must be at least 2")
            points = []
            for b in betas:
                lam = b ** (delta / d)
                points.append((Window(d, lam), b ** (1.0 - delta), int(math.ceil(per_unit * lam))))
        else:
            raise ConfigError(f"regime: expected fixed_window_kappa_sweep or growing_window, got {regime!r}")
        return cls(regime=regime, d=d, event=_event(raw), ell=ell, estimators=ests, points=points,
                   delta=delta, betas=betas, **_run_fields(raw))


# running ----------------------------------------------------------------------------

@dataclass
class ReportRow:
    name: str
    window: Window
    kappa: float
    beta: float
    event: EventKind
    ell: int
    estimator: Estimator
    grid: int | None
    report: EstimateReport
    relaxed: bool

    def as_dict(self) -> dict:
        r = self.report
        return {
            "name": self.name, "d": self.window.d, "lam": self.window.lam, "kappa": self.kappa,
            "beta": self.beta, "event": self.event.value, "ell": self.ell,
            "estimator": self.estimator.value, "grid": "" if self.grid is None else self.grid,
            "mean": r.mean, "rv": r.rv, "rv_se": r.rv_se, "m": r.m, "ci_low": r.ci_low,
            "ci_high": r.ci_high, "wall_ms": r.wall_ms, "seed": r.seed, "status": r.status,
            "relaxed": "relaxed" if self.relaxed else "",
        }


def _run_cell(name, w, kappa, event, ell, est, K, run: dict, relaxed) -> ReportRow:
    cfg = TrialConfig(w, kappa, EventSpec(event, ell), grid_K=K if est is Estimator.IS else None)
    rep = estimate(cfg, est, **run)
    return ReportRow(name, w, kappa, cfg.beta, event, ell, est, K if est is Estimator.IS else None,
                     rep, relaxed)


def _run_kwargs(cfg) -> dict:
    return dict(target_rv_of_mean=cfg.target_rv_of_mean, m_min=cfg.m_min, m_max=cfg.m_max,
                base_seed=cfg.base_seed, batch_size=cfg.batch_size, workers=cfg.workers,
                max_seconds=cfg.max_seconds)


def run_table(cfg: ExperimentConfig, progress=None) -> list[ReportRow]:
    """One row per (kappa, ell, estimator, grid) cell."""
    rows = []
    run = _run_kwargs(cfg)
    for kappa, ell in cfg.params:
        for est in cfg.estimators:
            for K in (cfg.grids if est is Estimator.IS else [None]):
                row = _run_cell(cfg.name, cfg.window, kappa, cfg.event, ell, est, K, run, cfg.relaxed)
                rows.append(row)
                if progress:
                    progress(row)
    return rows


@dataclass
class RegimeSummary:
    estimator: Estimator
    rvs: list[float]
    growth: list[float]


def run_regime(cfg: RegimeConfig, progress=None) -> tuple[list[ReportRow], list[RegimeSummary]]:
    rows = []
    run = _run_kwargs(cfg)
    for w, kappa, K in cfg.points:
        for est in cfg.estimators:
            row = _run_cell(cfg.name, w, kappa, cfg.event, cfg.ell, est, K, run, cfg.relaxed)
            rows.append(row)
            if progress:
                progress(row)
    summaries = []
    for est in cfg.estimators:
        rvs = [r.report.rv for r in rows if r.estimator is est]
        growth = [b / a if a > 0 else math.nan for a, b in zip(rvs, rvs[1:])]
        summaries.append(RegimeSummary(est, rvs, growth))
    return rows, summaries


# reports --------------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "nan" if math.isnan(value) else f"{float(value):.5e}"
    return str(value)


def rows_to_csv(rows: list[ReportRow]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(REPORT_COLUMNS)
    for row in rows:
        d = row.as_dict()
        wr.writerow([_fmt(d[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def rows_to_text(rows: list[ReportRow]) -> str:
    cols = ["kappa", "ell", "estimator", "grid", "mean", "rv", "m", "ci_low", "ci_high",
            "wall_ms", "status", "relaxed"]
    table = [cols] + [[_fmt(r.as_dict()[c]) for c in cols] for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(cols))]
    lines = ["  ".join(cell.rjust(wd) for cell, wd in zip(line, widths)) for line in table]
    lines.insert(1, "  ".join("-" * wd for wd in widths))
    return "\n".join(lines)


def write_report(rows: list[ReportRow], path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows), encoding="utf-8")
    txt = path.with_suffix(".txt")
    txt.write_text(rows_to_text(rows) + "\n", encoding="utf-8")
    return path, txt


def read_report(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# replay ---------------------------------------------------------------------------------------

def replay_trial(cfg: TrialConfig, estimator: Estimator | str, seed: int, stream_id: int):
    """Re-run a single trial; importance sampling also returns its traces."""
    est = Estimator(estimator)
    rng = RngStream(seed, stream_id)
    if est is Estimator.IS:
        return run_is_trial(cfg, rng, record=True, blocker=GridBlocker(cfg.window, cfg.grid_K, cfg.event))
    if est is Estimator.CMC:
        return run_cmc_trial(cfg, rng)
    return run_nmc_trial(cfg, rng)


# verification ----------------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def _fixed_sample(cfg: TrialConfig, est: Estimator, seed: int, m: int,
                  fault_rng: np.random.Generator | None = None) -> tuple[float, float, float]:
    """Mean, standard error and relative variance of ``m`` serial trials."""
    if est is Estimator.IS:
        b = GridBlocker(cfg.window, cfg.grid_K, cfg.event)
        b.fault_rng = fault_rng
        vals = []
        for i in range(m):
            b.reset()
            vals.append(run_is_trial(cfg, RngStream(seed, i), blocker=b).value)
    else:
        trial = run_cmc_trial if est is Estimator.CMC else run_nmc_trial
        vals = [trial(cfg, RngStream(seed, i)).value for i in range(m)]
    y = np.asarray(vals)
    return float(y.mean()), float(y.std(ddof=1) / math.sqrt(m)), relative_variance(y)


def _corrupt(table):
    cdf = np.array(table.cdf)
    k = int(table.beta)
    cdf[k], cdf[k + 1] = cdf[k + 1], cdf[k]
    return dataclasses.replace(table, cdf=cdf, _cdf_list=cdf.tolist())


FAULTS = ("extra-block", "corrupt-table")


def verify(seed: int = 0, fault: str | None = None, quick: bool = False, log=print) -> list[Check]:
    """Oracle suite: table invariants, 1-D exact, 2-D pairwise, soundness, variance ordering, agreement.

    ``fault`` injects a known defect so the suite's own sensitivity can be checked.
    """
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; choose from {FAULTS}")
    scale = 0.25 if quick else 1.0
    gen = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    fault_rng = np.random.default_rng(seed) if fault == "extra-block" else None
    checks: list[Check] = []

    def record(name, ok, detail):
        checks.append(Check(name, bool(ok), detail))
        log(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

    t0 = time.perf_counter()
    problems = []
    for beta in (2.0, 5.0, 8.0, 40.0, 120.0, 400.0):
        table = make_poisson_table(beta)
        if fault == "corrupt-table":
            table = _corrupt(table)
        problems += [f"beta={beta:g}: {p}" for p in oracles.check_table(table)]
    record("poisson_table", not problems, "; ".join(problems[:3]) or "invariants hold for 6 rates")

    m1 = int(20_000 * scale)
    worst = 0.0
    w1 = Window(1, 10.0)
    for beta in (2.0, 5.0, 8.0):
        exact = oracles.hard_sphere_1d_exact(10.0, beta).value
        cfg = TrialConfig(w1, beta / 10.0, EventSpec(EventKind.EDGE_COUNT, 0), grid_K=100)
        for est in Estimator:
            mean, se, _ = _fixed_sample(cfg, est, seed, m1 if est is not Estimator.IS else m1 // 4)
            worst = max(worst, abs(mean - exact) / se if se > 0 else math.inf)
    record("hard_sphere_1d", worst <= 4.0, f"worst deviation {worst:.2f} SE over 9 cells")

    exact2 = oracles.pairwise_distance_exact_2d(10.0)
    bf = oracles.brute_force_pn(Window(2, 10.0), EventSpec(EventKind.EDGE_COUNT, 0), 2,
                                int(400_000 * scale), gen)
    z = abs(bf.value - exact2) / bf.std_err
    record("pairwise_2d", z <= 4.0, f"brute force {bf.value:.6f} vs {exact2:.6f} ({z:.2f} SE)")

    sound_cases = [(EventKind.EDGE_COUNT, 2, 0.3), (EventKind.MAX_DEGREE, 3, 0.6),
                   (EventKind.MAX_COMPONENT, 3, 0.5), (EventKind.MAX_CLIQUE, 2, 0.8),
                   (EventKind.TRIANGLE_COUNT, 1, 0.8)]
    total_v = total_p = 0
    for kind, ell, kappa in sound_cases:
        cfg = TrialConfig(Window(2, 10.0), kappa, EventSpec(kind, ell), grid_K=50)
        rep = oracles.probe_blocking_soundness(cfg, max(10, int(60 * scale)), 100, gen,
                                               fault_rng=fault_rng)
        total_v += rep.violations
        total_p += rep.probes
    record("blocking_soundness", total_v == 0, f"{total_v} violations in {total_p} probes")

    cfg2 = TrialConfig(Window(2, 10.0), 0.2, EventSpec(EventKind.EDGE_COUNT, 0), grid_K=100)
    rvs = {}
    means = {}
    sizes = {Estimator.NMC: int(40_000 * scale), Estimator.CMC: int(20_000 * scale),
             Estimator.IS: int(4_000 * scale)}
    for est in Estimator:
        if est is Estimator.IS and fault_rng is not None:
            mean, se, rvs[est] = _fixed_sample(cfg2, est, seed + 1, sizes[est], fault_rng)
            means[est] = (mean, se)
            continue
        rep = estimate(cfg2, est, target_rv_of_mean=1.0, m_min=sizes[est], m_max=sizes[est],
                       base_seed=seed + 1, workers=1)
        rvs[est] = rep.rv
        means[est] = (rep.mean, rep.std_err)
    ok = rvs[Estimator.IS] < rvs[Estimator.CMC] < rvs[Estimator.NMC]
    record("variance_ordering", ok, "RV is={:.3g} cmc={:.3g} nmc={:.3g}".format(
        rvs[Estimator.IS], rvs[Estimator.CMC], rvs[Estimator.NMC]))
    worst = 0.0
    ests = list(Estimator)
    for i, a in enumerate(ests):
        for b in ests[i + 1:]:
            (ma, sa), (mb, sb) = means[a], means[b]
            worst = max(worst, abs(ma - mb) / math.hypot(sa, sb))
    record("unbiasedness_agreement", worst <= 4.0,
           "means " + " ".join(f"{e.value}={means[e][0]:.4g}" for e in ests)
           + f"; worst pair {worst:.2f} combined SE")
    log(f"verify finished in {time.perf_counter() - t0:.1f} s")
    return checks
