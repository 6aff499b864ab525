import csv
import json

import pytest

from dtalloc.cli import EXIT_DIVERGED, EXIT_INVALID, EXIT_OK, main
from dtalloc.config import load_config, load_text, parse_override, validate
from dtalloc.errors import ConfigValidationError
from dtalloc.scenarios import derive_seeds

SMALL = """
seed = 3
name = "small"

[problem]
kind = "generators"
n = 6
b = 360
types = ["A", "B", "C", "D", "E", "A"]

[network]
kind = "cycle"

[protocol]
variant = "node"
nonlinearity = "sat(kappa=1/60)"
step_T = 0.02
max_steps = 400
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def test_validate_reports_every_problem_with_lines(tmp_path):
    bad = SMALL.replace("step_T = 0.02", "step_T = -1").replace('kind = "cycle"', 'kind = "torus"')
    path = tmp_path / "bad.toml"
    path.write_text(bad)
    with pytest.raises(ConfigValidationError) as exc:
        load_config(path)
    text = "\n".join(exc.value.problems)
    assert "step_T" in text and "torus" in text and "line" in text


def test_cli_exit_codes(small_cfg, tmp_path, capsys):
    assert main(["validate", str(small_cfg)]) == EXIT_OK
    assert main(["validate", str(small_cfg), "--set", "protocol.step_T=0"]) == EXIT_INVALID
    assert main(["solve", str(small_cfg), "--set", "protocol.step_T=100",
                 "--set", "protocol.nonlinearity=id", "--out", str(tmp_path / "div")]) == EXIT_DIVERGED


def test_cli_solve_writes_outputs(small_cfg, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["solve", str(small_cfg), "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["seed"] == 3 and report["iterations"] == 400
    assert report["max_feasibility_drift"] == 0.0
    rows = list(csv.reader((out / "trace.csv").open()))
    assert len(rows) == 402
    err = capsys.readouterr().err
    assert "seed=3" in err and "hash=" in err


def test_cli_check_bound_preset(capsys):
    assert main(["check-bound", "edp5-cycle"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["step_bound"]["T_lambda"] == pytest.approx(0.0274929, rel=1e-5)


def test_sweep(tmp_path, capsys):
    text = SMALL + """
[sweep]
grid = { "protocol.step_T" = [0.01, 0.02] }
trials = 2
"""
    path = tmp_path / "sweep.toml"
    path.write_text(text)
    out = tmp_path / "sw"
    assert main(["sweep", str(path), "--out", str(out), "--workers", "1"]) == EXIT_OK
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert len(rows) == 4
    summary = list(csv.DictReader((out / "sweep_summary.csv").open()))
    assert len(summary) == 2


def test_overrides_and_hash():
    assert parse_override("protocol.step_T=0.5") == ("protocol.step_T", 0.5)
    assert parse_override('protocol.nonlinearity="id"') == ("protocol.nonlinearity", "id")
    a = load_text(SMALL)
    assert a.hash() == load_text(SMALL).hash()
    assert a.hash() != load_text(SMALL.replace("seed = 3", "seed = 4")).hash()
    assert validate(a) == []


def test_seed_derivation_is_stable():
    a, b = derive_seeds(7), derive_seeds(7)
    assert a == b and len(set(a.values())) == 4
    assert derive_seeds(8) != a


@pytest.mark.parametrize("preset", ["edp50", "edp5-cycle", "quantized100"])
def test_presets_validate(preset):
    assert validate(load_config(preset)) == []


def test_shipped_configs_validate():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "configs"
    files = sorted(root.glob("*.toml"))
    assert files
    for f in files:
        assert validate(load_config(f)) == [], f.name


def test_step_fraction_displaces_preset_step():
    cfg = load_text('preset = "edp5-cycle"\n[protocol]\nstep_fraction = 0.5\n')
    assert "step_T" not in cfg.section("protocol")
    back = cfg.with_overrides({"protocol.step_T": 0.01})
    assert "step_fraction" not in back.section("protocol")


def test_undefined_bound_exits_cleanly(tmp_path, capsys):
    text = SMALL.replace('nonlinearity = "sat(kappa=1/60)"', 'nonlinearity = "fixed(nu1=0.4, nu2=1.6)"')
    text = text.replace("step_T = 0.02", "step_fraction = 0.5")
    path = tmp_path / "fixed.toml"
    path.write_text(text)
    assert main(["solve", str(path)]) == EXIT_INVALID
    assert "step bound" in capsys.readouterr().err
