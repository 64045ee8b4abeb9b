import csv
import math
import subprocess
import sys
from pathlib import Path

import pytest

from gilbert_rare.cli import main
from gilbert_rare.estimators import Estimator
from gilbert_rare.harness import (REPORT_COLUMNS, ConfigError, ExperimentConfig, RegimeConfig, apply_overrides,
                                  parse_config_text, read_report, rows_to_csv, run_regime, run_table, verify,
                                  write_report)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """
# tiny experiment
name = small
d = 2
lam = 10
kappa = 0.1, 0.2   # zipped with ell
ell = 0
estimators = nmc, cmc, is
grids = 50
target_rv_of_mean = 0.05
m_min = 200
base_seed = 5
"""


def test_parse_grammar():
    raw = parse_config_text(SMALL)
    assert raw["kappa"] == "0.1, 0.2" and raw["name"] == "small"
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("no equals sign")
    raw = apply_overrides(raw, ["KAPPA=0.3", "grids = 60"])
    assert raw["kappa"] == "0.3" and raw["grids"] == "60"
    with pytest.raises(ConfigError):
        apply_overrides(raw, ["oops"])


def test_experiment_config_validation():
    cfg = ExperimentConfig.from_raw(parse_config_text(SMALL))
    assert cfg.params == [(0.1, 0), (0.2, 0)] and cfg.relaxed
    bad = [("estimators", ""), ("kappa", "-1"), ("lam", "0"), ("grids", "0"), ("m_min", "5"),
           ("ell", "1.5"), ("event", "nonsense"), ("bogus", "1")]
    for key, value in bad:
        raw = apply_overrides(parse_config_text(SMALL), [f"{key}={value}"])
        with pytest.raises(ConfigError, match=key):
            ExperimentConfig.from_raw(raw)
    raw = apply_overrides(parse_config_text(SMALL), ["kappa=0.1,0.2,0.3", "ell=0,1"])
    with pytest.raises(ConfigError, match="kappa/ell"):
        ExperimentConfig.from_raw(raw)


def test_shipped_configs_parse():
    for name in ["table1_2", "table3", "table4"]:
        ExperimentConfig.from_raw(parse_config_text((CONFIGS / f"{name}.cfg").read_text()))
    t4 = ExperimentConfig.from_raw(parse_config_text((CONFIGS / "table4.cfg").read_text()))
    assert t4.params == [(1.0, 4), (1.5, 4), (2.0, 5)]
    t12 = ExperimentConfig.from_raw(parse_config_text((CONFIGS / "table1_2.cfg").read_text()))
    assert [k for k, _ in t12.params] == [0.1, 0.2, 0.3, 0.4] and t12.grids == [100, 200, 300]
    for name in ["regime_fixed", "regime_growing"]:
        RegimeConfig.from_raw(parse_config_text((CONFIGS / f"{name}.cfg").read_text()))


def test_regime_config():
    raw = parse_config_text((CONFIGS / "regime_growing.cfg").read_text())
    cfg = RegimeConfig.from_raw(raw)
    for (w, kappa, K), beta in zip(cfg.points, [20, 40, 80]):
        assert w.lam == pytest.approx(beta ** 0.75)
        assert kappa == pytest.approx(beta ** -0.5)
        assert kappa * w.volume() == pytest.approx(beta)
        assert K == math.ceil(10 * w.lam)
    with pytest.raises(ConfigError, match="delta"):
        RegimeConfig.from_raw(apply_overrides(raw, ["delta=2.5"]))
    with pytest.raises(ConfigError, match="regime"):
        RegimeConfig.from_raw(apply_overrides(raw, ["regime=other"]))


def test_run_table_and_reports(tmp_path):
    cfg = ExperimentConfig.from_raw(parse_config_text(SMALL))
    rows = run_table(cfg)
    assert [(r.kappa, r.estimator) for r in rows] == [
        (0.1, Estimator.NMC), (0.1, Estimator.CMC), (0.1, Estimator.IS),
        (0.2, Estimator.NMC), (0.2, Estimator.CMC), (0.2, Estimator.IS)]
    csv_path, txt_path = write_report(rows, tmp_path / "out.csv")
    back = read_report(csv_path)
    assert list(back[0].keys()) == REPORT_COLUMNS
    assert back[0]["relaxed"] == "relaxed" and back[0]["seed"] == "5"
    mean_text = back[2]["mean"]
    assert "e" in mean_text and len(mean_text.split("e")[0].replace(".", "")) == 6
    assert "estimator" in txt_path.read_text()
    # replaying the embedded seed reproduces every mean bit for bit
    again = run_table(ExperimentConfig.from_raw(parse_config_text(SMALL)))
    assert rows_to_csv(again).splitlines()[1:] and [r.report.mean for r in again] == [r.report.mean for r in rows]


def test_no_hit_cell_is_flagged():
    raw = apply_overrides(parse_config_text(SMALL), ["kappa=0.5", "estimators=nmc", "m_min=100", "m_max=100"])
    rows = run_table(ExperimentConfig.from_raw(raw))
    assert rows[0].report.status == "no-hit"


def test_run_regime_summary():
    raw = parse_config_text((CONFIGS / "regime_fixed.cfg").read_text())
    raw = apply_overrides(raw, ["kappa=0.1,0.2", "target_rv_of_mean=0.2", "m_min=200", "grids=50"])
    rows, summaries = run_regime(RegimeConfig.from_raw(raw))
    assert len(rows) == 4 and {s.estimator for s in summaries} == {Estimator.CMC, Estimator.IS}
    for s in summaries:
        assert len(s.rvs) == 2 and len(s.growth) == 1


def test_verify_quick_passes_and_faults_fail():
    logs = []
    checks = verify(seed=0, quick=True, log=logs.append)
    assert all(c.passed for c in checks), logs
    bad = {c.name: c.passed for c in verify(seed=0, fault="extra-block", quick=True, log=lambda s: None)}
    assert not bad["unbiasedness_agreement"]
    bad = {c.name: c.passed for c in verify(seed=0, fault="corrupt-table", quick=True, log=lambda s: None)}
    assert not bad["poisson_table"]


def test_cli_table_and_replay(tmp_path, capsys):
    cfg = tmp_path / "small.cfg"
    cfg.write_text(SMALL)
    out = tmp_path / "r.csv"
    assert main(["table", str(cfg), "--set", "kappa=0.2", "--out", str(out), "--quiet"]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 3 and out.with_suffix(".txt").exists()
    capsys.readouterr()
    assert main(["trial", "--replay", "5,3", "--config", str(cfg)]) == 0
    first = capsys.readouterr().out
    assert main(["trial", "--replay", "5,3", "--config", str(cfg)]) == 0
    second = capsys.readouterr().out
    assert first == second and "step  L  blocked_volume" in first
    assert main(["table", str(cfg), "--set", "estimators="]) == 2
    assert main(["trial", "--replay", "bad", "--config", str(cfg)]) == 2


def test_cli_verify_exit_status():
    ok = subprocess.run([sys.executable, "-m", "gilbert_rare", "verify", "--quick"], capture_output=True, text=True)
    assert ok.returncode == 0, ok.stdout + ok.stderr
    bad = subprocess.run([sys.executable, "-m", "gilbert_rare", "verify", "--quick", "--fault", "corrupt-table"],
                         capture_output=True, text=True)
    assert bad.returncode != 0 and "FAIL  poisson_table" in bad.stdout
