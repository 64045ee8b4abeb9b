"""Command line entry point: ``gilbert-rare {table,regime,verify,trial}``."""

from __future__ import annotations

import argparse
import sys

from .estimators import Estimator, TrialConfig
from .graph import EventSpec
from .harness import (FAULTS, ConfigError, ExperimentConfig, RegimeConfig, load_config, replay_trial,
                      rows_to_text, run_regime, run_table, verify, write_report)


def _progress(row):
    r = row.report
    grid = f" grid={row.grid}" if row.grid else ""
    print(f"  kappa={row.kappa:g} ell={row.ell} {row.estimator.value}{grid}: mean={r.mean:.4e} "
          f"rv={r.rv:.4g} m={r.m} [{r.status}] {r.wall_ms / 1000:.1f}s", file=sys.stderr, flush=True)


def cmd_table(args) -> int:
    cfg = ExperimentConfig.from_raw(load_config(args.config, args.set))
    rows = run_table(cfg, progress=None if args.quiet else _progress)
    print(rows_to_text(rows))
    out = args.out or cfg.output
    if out:
        csv_path, txt_path = write_report(rows, out)
        print(f"wrote {csv_path} and {txt_path}")
    return 0


def cmd_regime(args) -> int:
    cfg = RegimeConfig.from_raw(load_config(args.config, args.set))
    rows, summaries = run_regime(cfg, progress=None if args.quiet else _progress)
    print(rows_to_text(rows))
    print()
    for s in summaries:
        growth = ", ".join(f"{g:.4g}" for g in s.growth) or "-"
        print(f"{s.estimator.value}: rv = {', '.join(f'{v:.4g}' for v in s.rvs)}; growth ratios = {growth}")
    out = args.out or cfg.output
    if out:
        csv_path, txt_path = write_report(rows, out)
        print(f"wrote {csv_path} and {txt_path}")
    return 0


def cmd_verify(args) -> int:
    checks = verify(seed=args.seed, fault=args.fault, quick=args.quick)
    failed = [c.name for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


def cmd_trial(args) -> int:
    try:
        seed_text, id_text = args.replay.split(",")
        seed, stream_id = int(seed_text), int(id_text)
    except ValueError:
        raise ConfigError(f"--replay: expected SEED,ID, got {args.replay!r}") from None
    cfg = ExperimentConfig.from_raw(load_config(args.config, args.set))
    kappa, ell = cfg.params[0]
    est = Estimator(args.estimator)
    K = cfg.grids[0] if est is Estimator.IS else None
    tc = TrialConfig(cfg.window, kappa, EventSpec(cfg.event, ell), grid_K=K)
    out = replay_trial(tc, est, seed, stream_id)
    print(f"estimator={est.value} seed={seed} id={stream_id} kappa={kappa:g} ell={ell}"
          + (f" grid={K}" if K else ""))
    print(f"value={out.value!r} points={out.points_generated}")
    if out.l_trace is not None:
        print("step  L  blocked_volume")
        vols = [0.0] + list(out.blocked_volume_trace)
        for i, L in enumerate(out.l_trace):
            print(f"{i}  {L:.17g}  {vols[i]:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gilbert-rare",
                                description="Rare-event estimation for Gilbert graphs.")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", help="key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")

    t = sub.add_parser("table", help="estimate every cell of an experiment table")
    with_config(t)
    t.add_argument("--out", help="CSV path (a .txt table is written alongside)")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_table)

    r = sub.add_parser("regime", help="run a kappa sweep or growing-window study")
    with_config(r)
    r.add_argument("--out")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_regime)

    v = sub.add_parser("verify", help="run the oracle verification suite")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--fault", choices=FAULTS, help="inject a known defect")
    v.add_argument("--quick", action="store_true", help="smaller sample sizes")
    v.set_defaults(func=cmd_verify)

    tr = sub.add_parser("trial", help="replay a single trial")
    tr.add_argument("--replay", required=True, metavar="SEED,ID")
    tr.add_argument("--config", required=True)
    tr.add_argument("--estimator", default="is", choices=[e.value for e in Estimator])
    tr.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    tr.set_defaults(func=cmd_trial)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
